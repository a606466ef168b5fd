"""Plain ``key = value`` configuration files."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def read_kv(path: str | Path) -> dict[str, str]:
    """Parse `key = value` (or `key: value`) lines; `#` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, value = line.split(sep, 1)
                break
        else:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def write_kv(path: str | Path, values: dict[str, object]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
