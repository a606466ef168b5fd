"""2-D convolution and transposed convolution with autodiff support.

Both layers are built from one strided cross-correlation kernel and its two
adjoints (with respect to the input and to the weights), compiled with numba.
"""

from __future__ import annotations

import numba
import numpy as np

from .tensor import ShapeError, Tensor


def out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def transpose_extent(n: int, k: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return stride * (n - 1) + k - 2 * padding + output_padding


# Kernels are stride-1 only; the wrappers realize stride s by subsampling the
# output (forward) or zero-dilating the incoming gradient (adjoints).


@numba.njit(cache=True, fastmath=True)
def _correlate(xp, w, out):
    batch, cin = xp.shape[0], xp.shape[1]
    cout, k = w.shape[0], w.shape[2]
    ho, wo = out.shape[2], out.shape[3]
    out[:] = 0
    for b in range(batch):
        for y in range(ho):
            for c in range(cin):
                for i in range(k):
                    row = xp[b, c, y + i]
                    for o in range(cout):
                        dst = out[b, o, y]
                        for j in range(k):
                            wv = w[o, c, i, j]
                            src = row[j : j + wo]
                            for x in range(wo):
                                dst[x] += wv * src[x]


@numba.njit(cache=True, fastmath=True)
def _correlate_input_grad(g, w, out):
    batch, cout = g.shape[0], g.shape[1]
    cin, k = w.shape[1], w.shape[2]
    ho, wo = g.shape[2], g.shape[3]
    out[:] = 0
    for b in range(batch):
        for y in range(ho):
            for o in range(cout):
                src = g[b, o, y]
                for c in range(cin):
                    for i in range(k):
                        row = out[b, c, y + i]
                        for j in range(k):
                            wv = w[o, c, i, j]
                            dst = row[j : j + wo]
                            for x in range(wo):
                                dst[x] += wv * src[x]


@numba.njit(cache=True, fastmath=True)
def _correlate_weight_grad(xp, g, out):
    batch, cin = xp.shape[0], xp.shape[1]
    cout, k = out.shape[0], out.shape[2]
    ho, wo = g.shape[2], g.shape[3]
    # per (c, i): row-wise partial products for every (o, j), reduced at the end
    tmp = np.empty((cout, k, wo), dtype=xp.dtype)
    for c in range(cin):
        for i in range(k):
            tmp[:] = 0
            for b in range(batch):
                for y in range(ho):
                    row = xp[b, c, y + i]
                    for o in range(cout):
                        src = g[b, o, y]
                        for j in range(k):
                            t = tmp[o, j]
                            win = row[j : j + wo]
                            for x in range(wo):
                                t[x] += src[x] * win[x]
            for o in range(cout):
                for j in range(k):
                    out[o, c, i, j] = tmp[o, j].sum()


def _dilate(g: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return np.ascontiguousarray(g)
    b, c, h, w = g.shape
    out = np.zeros((b, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=g.dtype)
    out[:, :, ::stride, ::stride] = g
    return out


def correlate(xp: np.ndarray, w: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    """out[b,o,y,x] = sum_{c,i,j} w[o,c,i,j] * xp[b,c,y*stride+i,x*stride+j]."""
    xp = np.ascontiguousarray(xp)
    w = np.ascontiguousarray(w, dtype=xp.dtype)
    out = np.empty((xp.shape[0], w.shape[0], (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=xp.dtype)
    _correlate(xp, w, out)
    return out if stride == 1 else np.ascontiguousarray(out[:, :, ::stride, ::stride])


def correlate_input_grad(g: np.ndarray, w: np.ndarray, stride: int, hp: int, wp: int) -> np.ndarray:
    """Adjoint of :func:`correlate` with respect to the padded input."""
    g = _dilate(g, stride)
    w = np.ascontiguousarray(w, dtype=g.dtype)
    out = np.empty((g.shape[0], w.shape[1], hp, wp), dtype=g.dtype)
    _correlate_input_grad(g, w, out)
    return out


def correlate_weight_grad(xp: np.ndarray, g: np.ndarray, stride: int, k: int) -> np.ndarray:
    """Adjoint of :func:`correlate` with respect to the weights."""
    xp = np.ascontiguousarray(xp)
    g = _dilate(np.asarray(g, dtype=xp.dtype), stride)
    out = np.empty((g.shape[1], xp.shape[1], k, k), dtype=xp.dtype)
    _correlate_weight_grad(xp, g, out)
    return out


def _check(x: Tensor, w: Tensor, in_axis: int, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: input must be rank 4 (batch, channels, height, width), got rank {x.ndim}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"{op}: weights must be (out, in, k, k), got {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeError(
            f"{op}: channel axis (1) of input has {x.shape[1]} channels, weights expect {w.shape[in_axis]}"
        )


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided cross-correlation with zero padding; weights are (out, in, k, k)."""
    _check(x, w, 1, "conv2d")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    k = w.shape[2]
    h, wd = x.shape[2:]
    ho, wo = out_extent(h, k, stride, padding), out_extent(wd, k, stride, padding)
    if ho < 1 or wo < 1:
        axis = "height (2)" if ho < 1 else "width (3)"
        raise ShapeError(f"conv2d: {axis} axis too small for kernel {k} with padding {padding}")
    xp = _pad(x.data, padding)
    out = correlate(xp, w.data, stride, ho, wo)
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    def back(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = correlate_input_grad(g, w.data, stride, xp.shape[2], xp.shape[3])
            gx = gxp[:, :, padding : padding + h, padding : padding + wd]
        if w.requires_grad:
            gw = correlate_weight_grad(xp, g, stride, k)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._from_op(out, parents, back, "conv2d")


def conv2d_transpose(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of :func:`conv2d` with the same (a, c, k, k) weights.

    Input channels match ``w.shape[0]``; output channels are ``w.shape[1]``.
    `output_padding` extra rows/columns are appended at the bottom/right.
    """
    _check(x, w, 0, "conv2d_transpose")
    if stride not in (1, 2):
        raise ValueError(f"conv2d_transpose: stride must be 1 or 2, got {stride}")
    if not 0 <= output_padding < stride:
        raise ValueError("conv2d_transpose: output_padding must be smaller than stride")
    if output_padding > padding:
        raise ValueError("conv2d_transpose: output_padding may not exceed padding")
    k = w.shape[2]
    h, wd = x.shape[2:]
    ho = transpose_extent(h, k, stride, padding, output_padding)
    wo = transpose_extent(wd, k, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d_transpose: kernel {k} with padding {padding} leaves no output")
    hp, wp = ho + 2 * padding, wo + 2 * padding
    full = correlate_input_grad(x.data, w.data, stride, hp, wp)
    out = np.ascontiguousarray(full[:, :, padding : padding + ho, padding : padding + wo])
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    def back(g):
        gx = gw = gb = None
        gp = _pad(g, padding)
        if x.requires_grad:
            gx = correlate(gp, w.data, stride, h, wd)
        if w.requires_grad:
            gw = correlate_weight_grad(gp, x.data, stride, k)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._from_op(out, parents, back, "conv2d_transpose")
