"""Dense real tensors with reverse-mode automatic differentiation.

Each differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient onto the parents' gradients.
:func:`backward` walks the recorded graph once in reverse topological order.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Scalar = float | int


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """An n-dimensional float array with optional gradient tracking.

    Image tensors use (batch, channels, height, width) layout.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
        op: str,
    ) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or t.data.size == 1 and t.data.ndim <= 1


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (only identical or scalar operands)")


def _reduce_to(grad: np.ndarray, like: Tensor) -> np.ndarray:
    if grad.shape == like.shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(like.shape)


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    a_t = a if isinstance(a, Tensor) else None
    b_t = b if isinstance(b, Tensor) else None
    ref = a_t if a_t is not None else b_t
    dtype = ref.dtype if ref is not None else None
    if a_t is None:
        a_t = Tensor(np.asarray(a, dtype=dtype))
    if b_t is None:
        b_t = Tensor(np.asarray(b, dtype=dtype))
    return a_t, b_t


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "add")
    return Tensor._from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a), _reduce_to(g, b)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "sub")
    return Tensor._from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a), _reduce_to(-g, b)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "mul")
    return Tensor._from_op(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def back(g):
        ga = g / b.data
        return _reduce_to(ga, a), _reduce_to(-ga * out, b)

    return Tensor._from_op(out, (a, b), back, "div")


def absolute(x: Tensor) -> Tensor:
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x: Tensor) -> Tensor:
    return Tensor._from_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0
    return Tensor._from_op(np.maximum(x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,), "relu")


# -- reductions and indexing ------------------------------------------------------


def tsum(x: Tensor) -> Tensor:
    return Tensor._from_op(
        np.asarray(x.data.sum(), dtype=x.dtype),
        (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
        "sum",
    )


def mean(x: Tensor) -> Tensor:
    n = x.size
    return Tensor._from_op(
        np.asarray(x.data.mean(), dtype=x.dtype),
        (x,),
        lambda g: (np.full(x.shape, g / n, dtype=x.dtype),),
        "mean",
    )


def getitem(x: Tensor, index) -> Tensor:
    def back(g):
        full = np.zeros_like(x.data)
        if _needs_add_at(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._from_op(x.data[index], (x,), back, "getitem")


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(not isinstance(i, (slice, int, type(Ellipsis))) for i in items)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return parts

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


# -- separable linear maps on the trailing image axes --------------------------


def separable(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply ``rows @ x @ cols.T`` over the last two axes.

    Windowed means with reflective borders and bilinear resizing are both
    expressible this way, so one adjoint covers all of them.
    """
    if x.shape[-2] != rows.shape[1]:
        raise ShapeError(f"separable: height {x.shape[-2]} does not match operator width {rows.shape[1]}")
    if x.shape[-1] != cols.shape[1]:
        raise ShapeError(f"separable: width {x.shape[-1]} does not match operator width {cols.shape[1]}")
    rows = rows.astype(x.dtype, copy=False)
    cols = cols.astype(x.dtype, copy=False)
    out = rows @ x.data @ cols.T
    return Tensor._from_op(out, (x,), lambda g: (rows.T @ g @ cols,), "separable")


def reflect_index(i: int, n: int) -> int:
    """Mirror an out-of-range index without repeating the edge sample."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


@lru_cache(maxsize=64)
def window_operator(n: int, size: int) -> np.ndarray:
    """(n, n) matrix averaging a `size`-tap window per output sample.

    The window at position i spans [i - size//2, i + size - size//2 - 1]
    with reflected indices outside [0, n).
    """
    op = np.zeros((n, n))
    lo = size // 2
    for i in range(n):
        for t in range(-lo, size - lo):
            op[i, reflect_index(i + t, n)] += 1.0 / size
    op.flags.writeable = False
    return op


def window_mean(x: Tensor, size: int = 8) -> Tensor:
    """Per-pixel mean over a size x size window with reflective borders."""
    h, w = x.shape[-2:]
    return separable(x, window_operator(h, size), window_operator(w, size))


def window_variance(x: Tensor, size: int = 8) -> Tensor:
    mu = window_mean(x, size)
    return window_mean(square(x), size) - square(mu)


def window_covariance(a: Tensor, b: Tensor, size: int = 8) -> Tensor:
    _check_broadcast(a, b, "window_covariance")
    return window_mean(a * b, size) - window_mean(a, size) * window_mean(b, size)


@lru_cache(maxsize=64)
def bilinear_operator(n: int, factor: int = 2) -> np.ndarray:
    """(factor*n, n) linear interpolation matrix with half-pixel centres and clamped edges."""
    op = np.zeros((factor * n, n))
    for j in range(factor * n):
        src = min(max((j + 0.5) / factor - 0.5, 0.0), n - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        op[j, i0] += 1.0 - frac
        op[j, i1] += frac
    op.flags.writeable = False
    return op


def upsample_bilinear(x: Tensor, factor: int = 2) -> Tensor:
    h, w = x.shape[-2:]
    return separable(x, bilinear_operator(h, factor), bilinear_operator(w, factor))


# -- graph traversal -------------------------------------------------------------


class Graph:
    """Operations reachable from an output, in execution (topological) order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None]

    def backward(self, seed: np.ndarray | None = None) -> None:
        out = self.output
        grads: dict[int, np.ndarray] = {
            id(out): np.ones_like(out.data) if seed is None else np.asarray(seed, dtype=out.dtype)
        }
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray] | None:
    """Accumulate d(loss)/d(leaf) into every tracked leaf's ``.grad``.

    When `params` is given, returns their gradients by name; parameters the
    loss does not reach get zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.requires_grad:
        Graph(loss).backward()
    if params is None:
        return None
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()
    }


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
