"""Grayscale image ingestion, 160x160 patch extraction, augmentation and batching."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .config import read_kv

logger = logging.getLogger(__name__)

PATCH = 160
BLOCK = 8


class PGMError(ValueError):
    """Malformed or unsupported PGM file."""


class EmptyPatchSet(ValueError):
    pass


@dataclass
class GrayImage:
    """8-bit grayscale image; `samples` is a (height, width) uint8 array."""

    samples: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.uint8)
        if self.samples.ndim != 2:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {self.samples.shape}")

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def normalized(self) -> np.ndarray:
        return self.samples.astype(np.float64) / 255.0

    @classmethod
    def from_unit(cls, x: np.ndarray, name: str = "") -> "GrayImage":
        """Quantize a [0,1]-valued array to 8 bits (clamped, rounded)."""
        return cls(np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8), name)


# -- PGM (P5) ---------------------------------------------------------------------


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and (buf[pos : pos + 1].isspace() or buf[pos : pos + 1] == b"#"):
            if buf[pos : pos + 1] == b"#":
                nl = buf.find(b"\n", pos)
                pos = n if nl < 0 else nl + 1
            else:
                pos += 1
        if pos >= n:
            raise PGMError(f"truncated header at byte {pos}: expected {count} fields, found {len(tokens)}")
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise PGMError(f"missing whitespace after maxval at byte {pos}")
    return tokens, pos + 1


def decode_pgm(buf: bytes, name: str = "") -> GrayImage:
    if buf[:2] != b"P5":
        raise PGMError(f"bad magic at byte 0: expected b'P5', got {buf[:2]!r}")
    tokens, offset = _header_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMError(f"non-integer header field near byte {offset}: {tokens[1:]}") from exc
    if width <= 0 or height <= 0:
        raise PGMError(f"non-positive extents {width}x{height} in header ending at byte {offset}")
    if maxval != 255:
        raise PGMError(f"maxval {maxval} in header ending at byte {offset}; only 255 is supported")
    need = width * height
    payload = buf[offset : offset + need]
    if len(payload) < need:
        raise PGMError(f"truncated payload: expected {need} bytes at byte {offset}, found {len(payload)}")
    return GrayImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width), name)


def encode_pgm(img: GrayImage) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode() + img.samples.tobytes()


def read_pgm(path: str | Path) -> GrayImage:
    """Read a P5 file without cropping."""
    path = Path(path)
    try:
        return decode_pgm(path.read_bytes(), path.stem)
    except PGMError as exc:
        raise PGMError(f"{path}: {exc}") from None


def write_pgm(path: str | Path, img: GrayImage) -> None:
    Path(path).write_bytes(encode_pgm(img))


def crop_to_blocks(img: GrayImage) -> GrayImage:
    """Top-left anchored crop to multiples of 8 in both axes."""
    h = img.height - img.height % BLOCK
    w = img.width - img.width % BLOCK
    if h == 0 or w == 0:
        raise PGMError(f"{img.name or 'image'}: {img.width}x{img.height} is smaller than one {BLOCK}x{BLOCK} block")
    return GrayImage(img.samples[:h, :w], img.name)


def load_image(path: str | Path) -> GrayImage:
    return crop_to_blocks(read_pgm(path))


def load_dir(path: str | Path) -> list[GrayImage]:
    files = sorted(Path(path).glob("*.pgm"))
    return [load_image(f) for f in files]


def bundled_corpus(split: str = "train") -> list[GrayImage]:
    """Images shipped with the package: splits ``train``, ``val`` and ``test``."""
    root = resources.files("vcnet") / "data" / "corpus" / split
    with resources.as_file(root) as d:
        images = load_dir(d)
    if not images:
        raise FileNotFoundError(f"no bundled images for split {split!r}")
    return images


# -- patches --------------------------------------------------------------------------


@dataclass
class PatchSet:
    """(n, size, size) float array of [0,1] patches plus their source ids."""

    patches: np.ndarray
    sources: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.patches)


def window_count(extent: int, patch: int, stride: int) -> int:
    return (extent - patch) // stride + 1 if extent >= patch else 0


def extract_patches(images: Sequence[GrayImage], patch: int = PATCH, stride: int = PATCH) -> PatchSet:
    if stride < 1:
        raise ValueError("extract_patches: stride must be positive")
    out: list[np.ndarray] = []
    sources: list[str] = []
    for img in images:
        if img.height < patch or img.width < patch:
            logger.warning("skipping %s: %dx%d is smaller than a %d patch", img.name, img.width, img.height, patch)
            continue
        x = img.normalized()
        for r in range(window_count(img.height, patch, stride)):
            for c in range(window_count(img.width, patch, stride)):
                out.append(x[r * stride : r * stride + patch, c * stride : c * stride + patch])
                sources.append(f"{img.name}@{r * stride},{c * stride}")
    if not out:
        raise EmptyPatchSet(f"no image is at least {patch}x{patch}")
    return PatchSet(np.stack(out), sources)


def dihedral(a: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 square symmetries on the last two axes: k%4 quarter turns, then a flip if k >= 4."""
    out = np.rot90(a, k % 4, axes=(-2, -1))
    if k >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if patch.shape[-1] != patch.shape[-2]:
        raise ValueError(f"augment: patch must be square, got {patch.shape[-2:]}")
    return dihedral(patch, int(rng.integers(8)))


@dataclass
class BatchPlan:
    """Batch size `m` and seed; each epoch uses floor(n/m) batches, leftovers are dropped."""

    m: int
    seed: int = 0
    augment: bool = True

    def batches_per_epoch(self, n: int) -> int:
        if self.m < 1:
            raise ValueError("batch size must be positive")
        if self.m > n:
            raise ValueError(f"batch size {self.m} exceeds patch count {n}")
        return n // self.m

    def draws(self, n: int, epoch: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """(indices, dihedral codes) per batch for one epoch; deterministic in (seed, epoch)."""
        count = self.batches_per_epoch(n)
        rng = np.random.default_rng([self.seed, epoch])
        order = rng.permutation(n)
        codes = rng.integers(8, size=n) if self.augment else np.zeros(n, dtype=np.int64)
        return [
            (order[i * self.m : (i + 1) * self.m], codes[i * self.m : (i + 1) * self.m]) for i in range(count)
        ]


def gather(arrays: Sequence[np.ndarray], idx: np.ndarray, codes: np.ndarray, dtype=np.float32) -> list[np.ndarray]:
    """Pick rows `idx` from each (n, H, W) or (n, C, H, W) array, applying the same dihedral code to aligned rows.

    Returns (m, C, H, W) arrays (C = 1 for 3-D inputs).
    """
    out = []
    for arr in arrays:
        rows = np.stack([dihedral(arr[i], int(c)) for i, c in zip(idx, codes)])
        out.append((rows[:, None] if rows.ndim == 3 else rows).astype(dtype, copy=False))
    return out


def batches(
    patch_set: PatchSet, plan: BatchPlan, epoch: int = 0, dtype=np.float32
) -> Iterator[np.ndarray]:
    for idx, codes in plan.draws(len(patch_set), epoch):
        yield gather([patch_set.patches], idx, codes, dtype)[0]


# -- configuration ----------------------------------------------------------------------


@dataclass
class DatasetConfig:
    train_dir: str | None = None
    val_dir: str | None = None
    patch_stride: int = PATCH
    seed: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetConfig":
        kv = read_kv(path)
        return cls(
            train_dir=kv.get("train_dir") or None,
            val_dir=kv.get("val_dir") or None,
            patch_stride=int(kv.get("patch_stride", PATCH)),
            seed=int(kv.get("seed", 0)),
        )

    def train_images(self) -> list[GrayImage]:
        return load_dir(self.train_dir) if self.train_dir else bundled_corpus("train")

    def val_images(self) -> list[GrayImage]:
        return load_dir(self.val_dir) if self.val_dir else bundled_corpus("val")
