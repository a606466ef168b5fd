"""Built-in oracle checks, runnable without the test suite (``vcnet selftest``).

Each check compares an implementation against an independent brute-force
evaluation and raises AssertionError on disagreement.
"""

from __future__ import annotations

import itertools
import math
import time
from typing import Callable

import numpy as np

from .codec.arith import arith_decode, arith_encode
from .codec.blockdct import dct8, idct8, quant_table
from .conv import conv2d, conv2d_transpose
from .dataset import extract_patches, GrayImage, window_count
from .losses import SsimParams, gradient_diff, l1_data, ssim_map
from .networks import Mode, build_idn, build_rsn
from .quantizer import QuantizerSpec, dequantize, quantize, quantize_symbols
from .tensor import Tensor, backward, reflect_index, upsample_bilinear, window_covariance, window_variance


def fd_relative_error(f: Callable[[], Tensor], leaf: Tensor, h: float = 1e-6, picks: int = 12, seed: int = 0) -> float:
    """Max relative error between autodiff and central differences at random coordinates of `leaf`."""
    leaf.requires_grad = True
    leaf.grad = None
    backward(f())
    analytic = leaf.grad.copy()
    rng = np.random.default_rng(seed)
    flat = leaf.data.reshape(-1)
    worst = 0.0
    for idx in rng.choice(flat.size, size=min(picks, flat.size), replace=False):
        old = flat[idx]
        flat[idx] = old + h
        up = f().item()
        flat[idx] = old - h
        down = f().item()
        flat[idx] = old
        numeric = (up - down) / (2 * h)
        a = analytic.reshape(-1)[idx]
        worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst


def _check_conv_adjoint():
    rng = np.random.default_rng(1)
    for stride, k in ((1, 3), (2, 3), (2, 9)):
        p = k // 2
        u = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, k, k))
        cu = conv2d(Tensor(u), Tensor(w), None, stride, p).data
        v = rng.standard_normal(cu.shape)
        op = 6 - ((cu.shape[2] - 1) * stride + k - 2 * p)
        ctv = conv2d_transpose(Tensor(v), Tensor(w), None, stride, p, op).data
        assert abs(np.vdot(cu, v) - np.vdot(u, ctv)) < 1e-10 * max(1.0, abs(np.vdot(cu, v)))


def _check_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(0, 1, (1, 1, 16, 16)))
    for net in (build_rsn(Mode.FULL, 4), build_idn(Mode.LOW, 4)):
        p = net.params["0.weight"]
        inp = x if net.kind == "rsn" else Tensor(x.data[:, :, :8, :8])
        err = fd_relative_error(lambda: (net(inp) * net(inp)).mean(), p, picks=6)
        assert err < 1e-4, f"{net.kind}: finite-difference relative error {err:.2e}"


def _check_loss_oracles():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(0, 1, (6, 6)), rng.uniform(0, 1, (6, 6))
    total = 0.0
    for i, j in itertools.product(range(6), range(6)):
        for di, dj in itertools.product((-1, 0, 1), repeat=2):
            ni, nj = i + di, j + dj
            if (di or dj) and 0 <= ni < 6 and 0 <= nj < 6:
                total += abs((a[i, j] - a[ni, nj]) - (b[i, j] - b[ni, nj]))
    got = gradient_diff(Tensor(a), Tensor(b)).item()
    assert abs(got - total / 36) < 1e-12, (got, total / 36)
    assert abs(l1_data(Tensor(a), Tensor(b)).item() - np.mean(np.abs(a - b))) < 1e-12

    a, b = rng.uniform(0, 1, (16, 16)), rng.uniform(0, 1, (16, 16))
    prm = SsimParams()
    k = prm.window
    want = np.empty((16, 16))
    for i, j in itertools.product(range(16), range(16)):
        rows = [reflect_index(r, 16) for r in range(i - k // 2, i - k // 2 + k)]
        cols = [reflect_index(c, 16) for c in range(j - k // 2, j - k // 2 + k)]
        wa, wb = a[np.ix_(rows, cols)], b[np.ix_(rows, cols)]
        ma, mb = wa.mean(), wb.mean()
        va, vb = ((wa - ma) ** 2).mean(), ((wb - mb) ** 2).mean()
        cov = ((wa - ma) * (wb - mb)).mean()
        want[i, j] = (2 * ma * mb + prm.c1) * (2 * cov + prm.c2) / ((ma * ma + mb * mb + prm.c1) * (va + vb + prm.c2))
    got = ssim_map(Tensor(a), Tensor(b), prm).data
    assert np.max(np.abs(got - want)) < 1e-10
    assert np.allclose(window_covariance(Tensor(a), Tensor(a)).data, window_variance(Tensor(a)).data, atol=1e-14)


def _check_bilinear():
    up = upsample_bilinear(Tensor(np.array([[0.0, 1.0], [1.0, 0.0]])), 2).data
    axis = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])
    assert np.allclose(up, axis @ np.array([[0.0, 1.0], [1.0, 0.0]]) @ axis.T, atol=1e-14)


def _check_quantizer():
    spec = QuantizerSpec(-1.7, 2.3, 64)
    y = np.linspace(spec.y_min, spec.y_max, 10_000)
    sym = quantize_symbols(y, spec)
    scaled = 64 * (y - spec.y_min) / (spec.y_max - spec.y_min)
    assert np.array_equal(sym, np.clip(np.floor(scaled + 0.5), 0, 64).astype(np.int64))
    assert np.all(np.diff(sym) >= 0)
    q = quantize(y, spec)
    assert np.array_equal(quantize(q, spec), q)
    assert np.max(np.abs(q - y)) <= (spec.y_max - spec.y_min) / 128 + 1e-12
    assert dequantize(np.array([0, 64]), spec).tolist() == [spec.y_min, spec.y_max]


def _check_codec():
    rng = np.random.default_rng(4)
    blocks = rng.uniform(-128, 127, (16, 8, 8))
    assert np.max(np.abs(idct8(dct8(blocks)) - blocks)) < 1e-10
    assert np.allclose((blocks**2).sum(axis=(1, 2)), (dct8(blocks) ** 2).sum(axis=(1, 2)), rtol=1e-12)
    tables = [quant_table(q) for q in range(1, 101)]
    assert all(np.all(t1 >= t2) for t1, t2 in zip(tables, tables[1:]))
    for length in range(5):
        for stream in itertools.product(range(3), repeat=length):
            assert arith_decode(arith_encode(stream, 3), length, 3) == list(stream)
    sym = rng.integers(0, 65, 10_000)
    data = arith_encode(sym, 65)
    assert arith_decode(data, len(sym), 65) == sym.tolist()
    assert len(data) <= 1.05 * len(sym) * math.log2(65) / 8


def _check_patches():
    img = GrayImage(np.zeros((320, 480), dtype=np.uint8), "synthetic")
    assert len(extract_patches([img], 160, 80)) == window_count(320, 160, 80) * window_count(480, 160, 80) == 15


CHECKS: dict[str, Callable[[], None]] = {
    "conv adjoint": _check_conv_adjoint,
    "network gradients vs finite differences": _check_gradients,
    "loss oracles": _check_loss_oracles,
    "bilinear x2 oracle": _check_bilinear,
    "quantizer dense scan": _check_quantizer,
    "codec transforms and entropy coder": _check_codec,
    "patch count": _check_patches,
}


def run(verbose: bool = False) -> bool:
    ok = True
    for name, check in CHECKS.items():
        t0 = time.perf_counter()
        try:
            check()
            status = "ok"
        except AssertionError as exc:
            ok = False
            status = f"FAIL {exc}"
        if verbose:
            print(f"{name:45s} {status} ({time.perf_counter() - t0:.2f}s)")
    return ok
