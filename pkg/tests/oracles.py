"""Brute-force reference implementations used only by the tests.

Everything here is written loop-by-loop from the defining formulas and shares
no code with the package under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def conv2d_direct(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi, oi, y, xx in itertools.product(range(n), range(o), range(ho), range(wo)):
        patch = xp[bi, :, y * stride : y * stride + k, xx * stride : xx * stride + k]
        out[bi, oi, y, xx] = np.sum(patch * w[oi]) + (0.0 if b is None else b[oi])
    return out


def conv2d_transpose_direct(x, w, b, stride, pad, out_pad):
    """Scatter form: every input site adds k x k weighted copies into the output."""
    n, ci, h, wd = x.shape
    _, co, k, _ = w.shape
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    full = np.zeros((n, co, full_h + out_pad, full_w + out_pad))
    for bi, c, y, xx in itertools.product(range(n), range(ci), range(h), range(wd)):
        full[bi, :, y * stride : y * stride + k, xx * stride : xx * stride + k] += x[bi, c, y, xx] * w[c]
    ho = (h - 1) * stride + k - 2 * pad + out_pad
    wo = (wd - 1) * stride + k - 2 * pad + out_pad
    out = full[:, :, pad : pad + ho, pad : pad + wo]
    if b is not None:
        out = out + b[None, :, None, None]
    return out


def reflect(i: int, n: int) -> int:
    """Mirror about the edge samples without repeating them (..., 2, 1, 0, 1, 2, ...)."""
    period = 2 * (n - 1)
    i = abs(i) % period if n > 1 else 0
    return period - i if i >= n else i


def window_stats(a, b, size=8):
    """Per-pixel windowed means, variances and covariance over [i - size/2, i + size/2 - 1]."""
    h, w = a.shape
    lo = size // 2
    mu_a, mu_b, var_a, var_b, cov = (np.zeros((h, w)) for _ in range(5))
    for i, j in itertools.product(range(h), range(w)):
        sa = sb = saa = sbb = sab = 0.0
        for di in range(-lo, size - lo):
            for dj in range(-lo, size - lo):
                va = a[reflect(i + di, h), reflect(j + dj, w)]
                vb = b[reflect(i + di, h), reflect(j + dj, w)]
                sa += va
                sb += vb
                saa += va * va
                sbb += vb * vb
                sab += va * vb
        m = size * size
        mu_a[i, j], mu_b[i, j] = sa / m, sb / m
        var_a[i, j] = saa / m - (sa / m) ** 2
        var_b[i, j] = sbb / m - (sb / m) ** 2
        cov[i, j] = sab / m - (sa / m) * (sb / m)
    return mu_a, mu_b, var_a, var_b, cov


def ssim_direct(a, b, c1=1e-4, c2=9e-4, size=8):
    mu_a, mu_b, var_a, var_b, cov = window_stats(a, b, size)
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def l1_direct(a, b):
    total = 0.0
    for v, u in zip(np.ravel(a), np.ravel(b)):
        total += abs(v - u)
    return total / np.size(a)


def gradient_diff_direct(a, b):
    h, w = a.shape
    total = 0.0
    for i, j in itertools.product(range(h), range(w)):
        for di, dj in itertools.product((-1, 0, 1), repeat=2):
            if di == dj == 0:
                continue
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w:
                total += abs((a[i, j] - a[ni, nj]) - (b[i, j] - b[ni, nj]))
    return total / (h * w)


def bilinear_x2(img):
    """Half-pixel-centred bilinear interpolation with clamped borders, per sample."""
    h, w = img.shape
    out = np.zeros((2 * h, 2 * w))
    for y, x in itertools.product(range(2 * h), range(2 * w)):
        sy = min(max((y + 0.5) / 2 - 0.5, 0.0), h - 1)
        sx = min(max((x + 0.5) / 2 - 0.5, 0.0), w - 1)
        y0, x0 = int(math.floor(sy)), int(math.floor(sx))
        y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
        fy, fx = sy - y0, sx - x0
        out[y, x] = (
            img[y0, x0] * (1 - fy) * (1 - fx)
            + img[y0, x1] * (1 - fy) * fx
            + img[y1, x0] * fy * (1 - fx)
            + img[y1, x1] * fy * fx
        )
    return out


def dct8_direct(block):
    out = np.zeros((8, 8))
    for u, v in itertools.product(range(8), repeat=2):
        cu = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
        cv = math.sqrt(1 / 8) if v == 0 else math.sqrt(2 / 8)
        s = 0.0
        for x, y in itertools.product(range(8), repeat=2):
            s += block[x, y] * math.cos((2 * x + 1) * u * math.pi / 16) * math.cos((2 * y + 1) * v * math.pi / 16)
        out[u, v] = cu * cv * s
    return out


def quant_entry(base: int, qf: int) -> int:
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    return min(255, max(1, (base * scale + 50) // 100))


def entropy_bytes(n: int, alphabet: int) -> float:
    return n * math.log2(alphabet) / 8


def finite_difference(f, x: np.ndarray, idx, h=1e-6) -> float:
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)


def relative_error(a: float, n: float, floor: float = 1e-10) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)
