"""Uniform feature-space quantizer with range statistics frozen from training codes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_BETA = 64


@dataclass(frozen=True)
class QuantizerSpec:
    y_min: float
    y_max: float
    beta: int = DEFAULT_BETA

    def __post_init__(self):
        if int(self.beta) != self.beta or self.beta < 1:
            raise ValueError(f"beta must be a positive integer, got {self.beta}")
        if not self.y_min < self.y_max:
            raise ValueError(f"need y_min < y_max, got {self.y_min} and {self.y_max}")

    @property
    def step(self) -> float:
        return (self.y_max - self.y_min) / self.beta

    @property
    def alphabet(self) -> int:
        return self.beta + 1


def fit_range(codes: Iterable, beta: int = DEFAULT_BETA) -> QuantizerSpec:
    lo, hi, seen = np.inf, -np.inf, False
    for c in codes:
        arr = np.asarray(getattr(c, "data", c), dtype=np.float64)
        if arr.size == 0:
            continue
        seen = True
        lo = min(lo, float(arr.min()))
        hi = max(hi, float(arr.max()))
    if not seen:
        raise ValueError("fit_range: no code values supplied")
    if lo == hi:
        raise ValueError(f"fit_range: degenerate range, every value equals {lo}")
    if lo > 0 or hi < 0:
        logger.warning("fitted code range [%g, %g] does not straddle zero", lo, hi)
    return QuantizerSpec(lo, hi, beta)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_symbols(y, spec: QuantizerSpec) -> np.ndarray:
    """Integer symbols in [0, beta]; inputs outside the fitted range are clamped."""
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    scaled = spec.beta * (y - spec.y_min) / (spec.y_max - spec.y_min)
    return np.clip(round_half_away(scaled), 0, spec.beta).astype(np.int64)


def dequantize(symbols, spec: QuantizerSpec) -> np.ndarray:
    s = np.asarray(symbols)
    if s.size and (s.min() < 0 or s.max() > spec.beta):
        raise ValueError(f"dequantize: symbols must lie in [0, {spec.beta}]")
    return s / spec.beta * (spec.y_max - spec.y_min) + spec.y_min


def quantize(y, spec: QuantizerSpec) -> np.ndarray:
    """Reconstruction on the quantization lattice (symbols, then back to code space)."""
    return dequantize(quantize_symbols(y, spec), spec)
