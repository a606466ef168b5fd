"""PSNR and SSIM on 8-bit images. SSIM shares its implementation with the DSSIM loss."""

from __future__ import annotations

import numpy as np

from .dataset import GrayImage
from .losses import SsimParams, ssim_map
from .tensor import Tensor

PSNR_CAP = 99.0


def _pair(a: GrayImage, b: GrayImage) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(f"image extents differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def mse(a: GrayImage, b: GrayImage) -> float:
    _pair(a, b)
    d = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    return float(np.mean(d * d))


def psnr(a: GrayImage, b: GrayImage) -> float:
    """10 log10(255^2 / MSE); identical images report PSNR_CAP."""
    e = mse(a, b)
    if e == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(255.0**2 / e)))


def ssim_metric(a: GrayImage, b: GrayImage, params: SsimParams = SsimParams()) -> float:
    _pair(a, b)
    return ssim_arrays(a.normalized(), b.normalized(), params)


def ssim_arrays(a: np.ndarray, b: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Mean SSIM of two [0,1]-valued planes."""
    return float(ssim_map(Tensor(np.asarray(a, dtype=np.float64)), Tensor(np.asarray(b, dtype=np.float64)), params).data.mean())
