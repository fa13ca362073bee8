"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation used by the model lives here.  A ``Tensor``
records the operation that produced it; :func:`backward` walks the recorded
graph once in reverse topological order and accumulates gradients into every
tensor that requires them.

Broadcasting follows numpy rules for the elementwise operations, and the
gradient of a broadcast operand is summed back to its original shape.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateVectorError,
    DimensionError,
    DomainError,
    InvalidMaskError,
)

DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32

NORM_EPS = 1e-12


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = np.dtype(dtype).type


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors ("f32" or "f64")."""
    if name not in DTYPES:
        raise ContractError(f"unknown precision {name!r}; expected one of {sorted(DTYPES)}")
    previous = _default_dtype
    set_default_dtype(DTYPES[name])
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """An n-dimensional array node in a differentiable computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- graph walk


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, inputs before outputs."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor upstream of the scalar ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` in between.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    order = topological_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                g = _unbroadcast(g, parent.shape)
            parent.grad = g if parent.grad is None else parent.grad + g


# --------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def broadcast_add(x: Tensor, row: Tensor) -> Tensor:
    """Add ``row`` to every leading slice of ``x``; row.shape must be a suffix of x.shape."""
    if x.shape[x.ndim - row.ndim:] != row.shape or row.ndim > x.ndim:
        raise DimensionError(f"broadcast_add: row shape {row.shape} is not a trailing shape of {x.shape}")
    return add(x, row)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return Tensor._result(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input")
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative input")
    out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    out = np.where(positive, a.data, a.data.dtype.type(0))
    return Tensor._result(out, (a,), lambda g: (g * positive,), "relu")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); identity when not training."""
    if not train or rate <= 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in train mode needs a random generator")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / a.dtype.type(1.0 - rate)
    return Tensor._result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ------------------------------------------------------------------- shapes


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), _backward, "matmul")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return Tensor._result(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def transpose(a: Tensor) -> Tensor:
    return swapaxes(a, -1, -2)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Tensor._result(np.broadcast_to(a.data, shape), (a,), lambda g: (g,), "broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def _backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor._result(out, tensors, _backward, "concat")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def _backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.array(out), (a,), _backward, "getitem")


# --------------------------------------------------------------- reductions


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._result(np.asarray(out), (a,), _backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    if count == 0:
        raise InvalidMaskError("mean over an empty set")
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    if a.shape[axis] == 0:
        raise InvalidMaskError("max over an empty set")
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    return Tensor._result(out, (a,), _backward, "max")


def mean_rows(x: Tensor) -> Tensor:
    return mean(x, axis=-2)


def max_rows(x: Tensor) -> Tensor:
    return max(x, axis=-2)


def masked_mean_rows(x: Tensor, mask: np.ndarray, allow_empty: bool = False) -> Tensor:
    """Mean over rows (axis -2) where ``mask`` is true; mask has shape x.shape[:-1].

    With ``allow_empty`` a row set with no valid rows yields a zero vector.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise DimensionError(f"masked_mean_rows: mask shape {mask.shape} does not match {x.shape[:-1]}")
    counts = mask.sum(axis=-1)
    if not allow_empty and np.any(counts == 0):
        raise InvalidMaskError("masked_mean_rows: a row set has no unmasked rows")
    weights = (mask / np.maximum(counts, 1)[..., None]).astype(x.dtype)[..., None]
    out = np.sum(x.data * weights, axis=-2)
    return Tensor._result(out, (x,), lambda g: (g[..., None, :] * weights,), "masked_mean_rows")


# ------------------------------------------------------------- normalizers


def softmax(x: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Exp-normalize along ``axis``; masked entries are exactly 0 and get no gradient."""
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if np.any(~mask.any(axis=axis)):
            raise InvalidMaskError("softmax: a row is fully masked")
        data = np.where(mask, data, -np.inf)
    shifted = data - np.max(data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0.0).astype(x.dtype)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), _backward, "softmax")


softmax_masked = softmax


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return Tensor._result(out, (x,), _backward, "logsumexp")


def norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return sqrt(sum(x * x, axis=axis, keepdims=keepdims))


def _check_norms(x: Tensor, name: str) -> None:
    norms = np.sqrt(np.sum(np.asarray(x.data, dtype=np.float64) ** 2, axis=-1))
    if np.any(norms <= NORM_EPS):
        raise DegenerateVectorError(f"{name}: vector norm below {NORM_EPS}")


def normalize(x: Tensor, axis: int = -1) -> Tensor:
    _check_norms(x, "normalize")
    return x / norm(x, axis=axis, keepdims=True)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity along the last axis (leading axes broadcast)."""
    _check_norms(u, "cosine_similarity")
    _check_norms(v, "cosine_similarity")
    return sum(u * v, axis=-1) / (norm(u) * norm(v))
