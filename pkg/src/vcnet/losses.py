"""L1 data loss, 8-neighbour gradient-difference loss, SSIM/DSSIM and the composite objectives."""

from __future__ import annotations

from dataclasses import dataclass, field

from .networks import Mode
from .tensor import ShapeError, Tensor, absolute, mean, upsample_bilinear, window_mean

# (dy, dx) for half of the 8-neighbourhood; the other half mirrors these exactly
_HALF_NEIGHBOURS = ((0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class SsimParams:
    c1: float = 1e-4
    c2: float = 9e-4
    window: int = 8


@dataclass(frozen=True)
class LossWeights:
    data: float = 1.0
    grad: float = 1.0
    dssim: float = 1.0

    def __post_init__(self):
        if min(self.data, self.grad, self.dssim) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class RoleWeights:
    idn: LossWeights = field(default_factory=LossWeights)
    vcn: LossWeights = field(default_factory=LossWeights)
    rsn: LossWeights = field(default_factory=LossWeights)


def _same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _pixels(a: Tensor) -> int:
    # per-image pixel count times batch size: averages the per-image loss over the batch
    return a.size


def l1_data(a: Tensor, b: Tensor) -> Tensor:
    _same(a, b, "l1_data")
    return mean(absolute(a - b))


def gradient_diff(a: Tensor, b: Tensor) -> Tensor:
    """Mean over pixels of the summed |grad_k A - grad_k B| over in-image 8-neighbours k."""
    _same(a, b, "gradient_diff")
    d = a - b
    h, w = d.shape[-2:]
    total = None
    for dy, dx in _HALF_NEIGHBOURS:
        ys, yt = slice(0, h - dy), slice(dy, h)
        xs, xt = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
        term = absolute(d[..., ys, xs] - d[..., yt, xt]).sum()
        total = term if total is None else total + term
    # each neighbour pair is visited from both ends with equal magnitude
    return total * (2.0 / _pixels(d))


def ssim_map(a: Tensor, b: Tensor, params: SsimParams = SsimParams()) -> Tensor:
    _same(a, b, "ssim_map")
    k = params.window
    mu_a = window_mean(a, k)
    mu_b = window_mean(b, k)
    mu_ab = mu_a * mu_b
    var_a = window_mean(a * a, k) - mu_a * mu_a
    var_b = window_mean(b * b, k) - mu_b * mu_b
    cov = window_mean(a * b, k) - mu_ab
    # numerator and denominator use identical operations when a is b, so ssim(a, a) == 1 exactly
    num = (mu_ab + mu_ab + params.c1) * (cov + cov + params.c2)
    den = (mu_a * mu_a + mu_b * mu_b + params.c1) * (var_a + var_b + params.c2)
    return num / den


def dssim(a: Tensor, b: Tensor, params: SsimParams = SsimParams()) -> Tensor:
    return 1.0 - mean(ssim_map(a, b, params))


def upsample_s(y: Tensor, mode) -> Tensor:
    """Bilinear x2 in low mode; identity (the same object) in full mode."""
    mode = mode if isinstance(mode, Mode) else Mode(mode)
    return upsample_bilinear(y, 2) if mode is Mode.LOW else y


# -- composite objectives -------------------------------------------------------------


def _weighted(parts: dict[str, Tensor], weights: LossWeights) -> Tensor:
    scale = {"data": weights.data, "grad": weights.grad, "dssim": weights.dssim}
    total = None
    for name, term in parts.items():
        t = term * scale[name]
        total = t if total is None else total + t
    return total


def idn_loss(decoded: Tensor, target: Tensor, framework: str = "scic", weights: LossWeights = LossWeights()):
    """Image decoding loss. Returns (total, {term: value})."""
    parts = {"data": l1_data(decoded, target)}
    if framework == "scic":
        parts["grad"] = gradient_diff(decoded, target)
    return _weighted(parts, weights), parts


def vcn_loss(
    virtual: Tensor,
    decoded: Tensor,
    mode=Mode.FULL,
    framework: str = "scic",
    weights: LossWeights = LossWeights(),
    ssim: SsimParams = SsimParams(),
):
    """Virtual codec loss; the DSSIM term is added only for low-resolution SCIC."""
    parts = {"data": l1_data(virtual, decoded)}
    if framework == "scic":
        parts["grad"] = gradient_diff(virtual, decoded)
        if Mode(mode) is Mode.LOW:
            parts["dssim"] = dssim(virtual, decoded, ssim)
    return _weighted(parts, weights), parts


def rsn_loss(
    virtual: Tensor,
    target: Tensor,
    resampled: Tensor | None = None,
    mode=Mode.FULL,
    framework: str = "scic",
    weights: LossWeights = LossWeights(),
    ssim: SsimParams = SsimParams(),
):
    """Decoding loss seen through the virtual codec, plus DSSIM(s(Y), X) for SCIC."""
    parts = {"data": l1_data(virtual, target)}
    if framework == "scic":
        parts["grad"] = gradient_diff(virtual, target)
        if resampled is None:
            raise ValueError("rsn_loss: SCIC needs the re-sampled image for its DSSIM term")
        parts["dssim"] = dssim(upsample_s(resampled, mode), target, ssim)
    return _weighted(parts, weights), parts
