"""Dense float tensors with reverse-mode automatic differentiation.

Every operation builds a node in an acyclic graph; ``Tensor.backward`` runs a
reverse topological sweep and accumulates gradients additively into every
participating tensor that has ``requires_grad`` set.  Arrays are numpy,
row-major, float32 by default; the same graph code runs unchanged in float64,
which is what ``grad_check`` uses to make finite differences meaningful.

Broadcasting follows the trailing-dimension alignment rule (numpy semantics):
shapes are right-aligned and a dimension of 1 stretches to match.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        """Reverse topological sweep seeding d(self)/d(self) = 1.

        Gradients accumulate additively, so repeated use of a tensor in the
        graph, or repeated backward calls, sum their contributions.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        order = self._topo_order()
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def _topo_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # Operator sugar; the module-level functions are the real implementation.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast up from `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data - b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(-_unbroadcast(g, b.shape))

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _node(-a.data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is fixed to 0."""
    sign = np.sign(a.data)

    def backward(g):
        a._accumulate(g * sign)

    return _node(np.abs(a.data), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # Evaluate through exp of the negated magnitude so both tails are stable.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return _node(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _node(np.where(mask, a.data, 0), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * np.where(mask, 1.0, slope).astype(a.dtype))

    return _node(np.where(mask, a.data, a.data * a.dtype.type(slope)), (a,), backward)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    al = x.dtype.type(alpha)
    expm1 = al * np.expm1(np.minimum(x, 0))
    out = np.where(x > 0, x, expm1)

    def backward(g):
        a._accumulate(g * np.where(x > 0, x.dtype.type(1.0), expm1 + al))

    return _node(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out)

    return _node(out, (a,), backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g.reshape(()), a.shape).astype(a.dtype))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))

    return _node(data, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D tensors")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _node(data, (a, b), backward)


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose2d expects a 2-D tensor")

    def backward(g):
        a._accumulate(np.ascontiguousarray(g.T))

    return _node(np.ascontiguousarray(a.data.T), (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a._accumulate(out * (g - dot))

    return _node(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            t._accumulate(g[tuple(index)])
            offset += size

    return _node(data, tuple(tensors), backward)


def spatial_slice(a: Tensor, rows: slice, cols: slice) -> Tensor:
    """Slice the trailing two axes; the gradient scatters back into zeros."""
    if a.ndim < 2:
        raise ValueError("spatial_slice needs at least 2 dimensions")
    index = (Ellipsis, rows, cols)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[index] = g
            a._accumulate(buf)

    return _node(np.ascontiguousarray(a.data[index]), (a,), backward)


def take_columns(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select columns of a 2-D tensor; indices must be unique."""
    if a.ndim != 2:
        raise ValueError("take_columns expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[:, idx] = g
            a._accumulate(buf)

    return _node(np.ascontiguousarray(a.data[:, idx]), (a,), backward)


def add_at_columns(a: Tensor, indices: np.ndarray, updates: Tensor) -> Tensor:
    """Return a copy of `a` with `updates` added at the given unique columns."""
    if a.ndim != 2 or updates.ndim != 2:
        raise ValueError("add_at_columns expects 2-D tensors")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size != updates.shape[1]:
        raise ValueError("index count does not match update column count")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ValueError("column index out of range")
    if len(np.unique(idx)) != idx.size:
        raise ValueError("duplicate column index")
    data = a.data.copy()
    data[:, idx] += updates.data

    def backward(g):
        a._accumulate(g)
        updates._accumulate(np.ascontiguousarray(g[:, idx]))

    return _node(data, (a, updates), backward)


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one 2-D convolution (cross-correlation)."""

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1 or self.dilation < 1:
            raise ValueError("stride and dilation must be >= 1")
        if self.kernel_size < 1 or self.padding < 0:
            raise ValueError("bad kernel size or padding")

    def output_extent(self, extent: int) -> int:
        span = self.dilation * (self.kernel_size - 1)
        out = (extent + 2 * self.padding - span - 1) // self.stride + 1
        if out <= 0:
            raise ValueError(f"input extent {extent} too small for {self}")
        return out


def same_padding(kernel_size: int, dilation: int = 1) -> int:
    """Padding that keeps spatial extent for stride-1 odd kernels."""
    return dilation * (kernel_size - 1) // 2


def _im2col(xp: np.ndarray, spec: ConvSpec, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[1]
    k, s, d = spec.kernel_size, spec.stride, spec.dilation
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            i0, j0 = ki * d, kj * d
            cols[:, :, ki, kj] = xp[:, :, i0 : i0 + s * oh : s, j0 : j0 + s * ow : s]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(dcols: np.ndarray, spec: ConvSpec, padded_shape, oh: int, ow: int) -> np.ndarray:
    n, c = padded_shape[0], padded_shape[1]
    k, s, d = spec.kernel_size, spec.stride, spec.dilation
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    d6 = dcols.reshape(n, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            i0, j0 = ki * d, kj * d
            dxp[:, :, i0 : i0 + s * oh : s, j0 : j0 + s * ow : s] += d6[:, :, ki, kj]
    return dxp


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Strided, dilated, zero-padded cross-correlation over [N,C,H,W]."""
    if x.ndim != 4:
        raise ValueError("conv2d expects input of shape [N,C,H,W]")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, spec wants {spec.in_channels}")
    k = spec.kernel_size
    if weight.shape != (spec.out_channels, spec.in_channels, k, k):
        raise ValueError(f"weight shape {weight.shape} does not match {spec}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {bias.shape} does not match {spec}")
    n, _, h, w = x.shape
    oh, ow = spec.output_extent(h), spec.output_extent(w)
    p = spec.padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, spec, oh, ow)
    w2 = weight.data.reshape(spec.out_channels, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, spec.out_channels, oh, ow)
    padded_shape = xp.shape

    def backward(g):
        g2 = g.reshape(n, spec.out_channels, oh * ow)
        if weight.requires_grad:
            dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            dxp = _col2im(dcols, spec, padded_shape, oh, ow)
            dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
            x._accumulate(dx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate each pixel into a 2x2 block; gradient sums the block."""
    if x.ndim != 4:
        raise ValueError("upsample_nearest2x expects [N,C,H,W]")
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _node(data, (x,), backward)


def avgpool2x(x: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 blocks; extents must be even."""
    if x.ndim != 4:
        raise ValueError("avgpool2x expects [N,C,H,W]")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("avgpool2x requires even spatial extents")
    data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        spread = g[:, :, :, None, :, None] * x.dtype.type(0.25)
        x._accumulate(np.broadcast_to(spread, (n, c, h // 2, 2, w // 2, 2)).reshape(x.shape))

    return _node(data, (x,), backward)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(fn, x, eps: float = 1e-5) -> float:
    """Compare analytic gradients of fn(x) against central differences.

    Runs in float64 regardless of the input dtype.  Returns the max relative
    error over all coordinates, with denominator max(|analytic|, |numeric|,
    1e-8).  fn must be deterministic and return a scalar tensor.
    """
    base = (x.data if isinstance(x, Tensor) else np.asarray(x)).astype(np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = fn(leaf)
    if out.data.size != 1:
        raise ValueError("grad_check requires fn to return a scalar")
    if not np.isfinite(out.data).all():
        raise ArithmeticError("grad_check: fn produced a non-finite value")
    out.backward()
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad.copy()

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(fn(Tensor(base)).data.reshape(()))
        flat[i] = orig - eps
        f_minus = float(fn(Tensor(base)).data.reshape(()))
        flat[i] = orig
        nflat[i] = (f_plus - f_minus) / (2.0 * eps)
    if not np.isfinite(numeric).all() or not np.isfinite(analytic).all():
        raise ArithmeticError("grad_check: non-finite gradient")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
