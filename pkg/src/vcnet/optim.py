"""Adam with bias correction, plus the stepped learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    """A gradient contained NaN or Inf; the update was not applied."""


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> AdamState:
    """Update `params` in place from `grads`; names absent from `grads` are left alone.

    Raises NonFiniteGradient (before touching anything) if any gradient is not finite.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"adam_step: gradient for {name!r} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"adam_step: non-finite gradient for {name!r}; step aborted")
    rate = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        p.data -= update.astype(p.dtype, copy=False)
    return state


def lr_at(step: int, total_steps: int, initial: float = 1e-4) -> float:
    """Halve at 3/5 of `total_steps` and again at 4/5."""
    if not 0 <= step < total_steps:
        raise ValueError(f"lr_at: step {step} outside [0, {total_steps})")
    if step < math.ceil(0.6 * total_steps):
        return initial
    if step < math.ceil(0.8 * total_steps):
        return initial / 2
    return initial / 4
