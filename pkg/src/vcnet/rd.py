"""Rate-distortion sweeps: one record per (method, image, knob), CSV and SVG output."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .codec.bitstream import bpp
from .dataset import GrayImage
from .metrics import psnr, ssim_metric
from .pipeline import InferenceModel, baseline_compress, baseline_decompress

logger = logging.getLogger(__name__)

METHODS = ("jpeg-like", "scic", "dnnc")
PAPER_QFS = (2, 6, 10, 20, 30, 40, 50, 60)
CSV_HEADER = ("method", "image", "knob", "bpp", "psnr", "ssim")


@dataclass(frozen=True)
class RdRecord:
    method: str
    image: str
    knob: int
    bpp: float
    psnr: float
    ssim: float

    def row(self) -> list[str]:
        return [self.method, self.image, str(self.knob), f"{self.bpp:.6g}", f"{self.psnr:.6g}", f"{self.ssim:.6g}"]


@dataclass
class SweepResult:
    records: list[RdRecord] = field(default_factory=list)
    missing: list[tuple[str, int]] = field(default_factory=list)

    def sorted(self) -> list[RdRecord]:
        return sorted(self.records, key=lambda r: (r.method, r.image, r.bpp, r.knob))


def evaluate(method: str, knob: int, img: GrayImage, model: InferenceModel | None = None) -> RdRecord:
    if method == "jpeg-like":
        stream = baseline_compress(img, knob)
        decoded = baseline_decompress(stream)
    else:
        stream = model.compress(img, knob if method == "scic" else None)
        decoded = model.decompress(stream)
    return RdRecord(method, img.name, knob, bpp(stream, img.width, img.height), psnr(img, decoded), ssim_metric(img, decoded))


def checkpoint_name(method: str, knob: int) -> str:
    return f"scic_qf{knob}.ckpt" if method == "scic" else f"dnnc_n{knob}.ckpt"


def _image_records(args) -> list[RdRecord]:
    img, jobs = args
    return [evaluate(method, knob, img, model) for method, knob, model in jobs]


def workers() -> int:
    try:
        return max(1, int(os.environ.get("VCN_THREADS", "1")))
    except ValueError:
        return 1


def rd_sweep(
    images: Sequence[GrayImage],
    methods: Sequence[str] = ("jpeg-like",),
    qfs: Sequence[int] = PAPER_QFS,
    ns: Sequence[int] = (),
    checkpoints: Mapping[tuple[str, int], str | Path | InferenceModel] | str | Path | None = None,
) -> SweepResult:
    """Evaluate every requested operating point on every image.

    `checkpoints` maps (method, knob) to a checkpoint (path or loaded model),
    or names a directory holding ``scic_qf<QF>.ckpt`` / ``dnnc_n<N>.ckpt``.
    Missing checkpoints are listed in the result; the sweep continues.
    """
    result = SweepResult()
    jobs: list[tuple[str, int, InferenceModel | None]] = []
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        knobs = ns if method == "dnnc" else qfs
        for knob in knobs:
            if method == "jpeg-like":
                jobs.append((method, knob, None))
                continue
            model = _resolve(checkpoints, method, knob)
            if model is None:
                logger.warning("no checkpoint for %s knob %d; skipped", method, knob)
                result.missing.append((method, knob))
                continue
            jobs.append((method, knob, model))
    tasks = [(img, jobs) for img in images]
    if workers() > 1 and len(images) > 1:
        with ProcessPoolExecutor(max_workers=workers()) as pool:
            chunks = list(pool.map(_image_records, tasks))
    else:
        chunks = [_image_records(t) for t in tasks]
    for chunk in chunks:
        result.records.extend(chunk)
    return result


def _resolve(checkpoints, method: str, knob: int) -> InferenceModel | None:
    if checkpoints is None:
        return None
    if isinstance(checkpoints, (str, Path)):
        path = Path(checkpoints) / checkpoint_name(method, knob)
        return InferenceModel.load(path) if path.is_file() else None
    ref = checkpoints.get((method, knob))
    if ref is None or isinstance(ref, InferenceModel):
        return ref
    return InferenceModel.load(ref) if Path(ref).is_file() else None


def to_csv(records: Sequence[RdRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(records, key=lambda r: (r.method, r.image, r.bpp, r.knob)):
        w.writerow(r.row())
    return buf.getvalue()


def write_csv(path: str | Path, records: Sequence[RdRecord]) -> None:
    Path(path).write_text(to_csv(records))


def read_csv(path: str | Path) -> list[RdRecord]:
    with open(path, newline="") as fh:
        return [
            RdRecord(r["method"], r["image"], int(r["knob"]), float(r["bpp"]), float(r["psnr"]), float(r["ssim"]))
            for r in csv.DictReader(fh)
        ]


def method_curves(records: Sequence[RdRecord]) -> dict[str, list[tuple[int, float, float, float]]]:
    """Per method: (knob, mean bpp, mean psnr, mean ssim) over images, ordered by bpp."""
    groups: dict[tuple[str, int], list[RdRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.knob), []).append(r)
    curves: dict[str, list[tuple[int, float, float, float]]] = {}
    for (method, knob), rs in groups.items():
        n = len(rs)
        curves.setdefault(method, []).append(
            (knob, sum(r.bpp for r in rs) / n, sum(r.psnr for r in rs) / n, sum(r.ssim for r in rs) / n)
        )
    return {m: sorted(c, key=lambda t: t[1]) for m, c in sorted(curves.items())}


def write_svg(path: str | Path, records: Sequence[RdRecord], title: str = "") -> None:
    """Two panels (PSNR and SSIM against bpp), one line per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "vcnet-rd"  # stable element ids
    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(10, 4))
    for method, pts in method_curves(records).items():
        rates = [p[1] for p in pts]
        ax_p.plot(rates, [p[2] for p in pts], marker="o", label=method)
        ax_s.plot(rates, [p[3] for p in pts], marker="o", label=method)
    for ax, label in ((ax_p, "PSNR (dB)"), (ax_s, "SSIM")):
        ax.set_xlabel("bpp")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def baseline_at_rate(records: Sequence[RdRecord], image: str, rate: float) -> RdRecord | None:
    """The jpeg-like record for `image` with the smallest bpp at or above `rate`."""
    above = [r for r in records if r.method == "jpeg-like" and r.image == image and r.bpp >= rate]
    return min(above, key=lambda r: (r.bpp, r.knob)) if above else None
