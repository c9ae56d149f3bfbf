"""Dense float64 tensors with tape-based reverse-mode differentiation.

A Tensor wraps a C-contiguous float64 numpy array. Ops applied to tensors
that live on a Tape append one node per primitive, in creation order, so the
node list is already topologically sorted; backward() walks it once in
reverse. Tensors without a tape take a plain-numpy fast path, which is what
inference uses.

Tensors are immutable values (the underlying buffer is write-locked) and may
be shared freely across threads; a single Tape is single-threaded.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

Array = np.ndarray

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Immutable float64 array, optionally tracked on a Tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        arr.flags.writeable = False
        self.data = arr
        self.tape: Tape | None = None
        self.node: int | None = None

    @classmethod
    def _wrap(cls, arr: Array) -> "Tensor":
        # Internal fast path: takes ownership of a freshly computed array.
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64, order="C")
        arr.flags.writeable = False
        t.data = arr
        t.tape = None
        t.node = None
        return t

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
    def tracked(self) -> bool:
        return self.node is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Operator sugar; all semantics live in the module-level ops.
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("parents", "vjp")

    def __init__(self, parents: tuple[int | None, ...], vjp: Callable | None):
        self.parents = parents
        self.vjp = vjp


class Gradients:
    """Result of a backward pass: gradient arrays keyed by leaf node."""

    def __init__(self, tape: "Tape", by_node: dict[int, Array]):
        self._tape = tape
        self._by_node = by_node

    def wrt(self, t: Tensor) -> Array:
        if t.tape is not self._tape or t.node is None:
            raise ContractError("tensor is not tracked on this tape")
        g = self._by_node.get(t.node)
        if g is None:
            return np.zeros_like(t.data)
        return g


class Tape:
    """Ordered record of primitive ops; operands always precede their node."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data) -> Tensor:
        """Register a differentiable input (copies the given array)."""
        t = Tensor(data)
        t.tape = self
        t.node = len(self._nodes)
        self._nodes.append(_Node((), None))
        return t

    def _record(self, data: Array, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
        t = Tensor._wrap(data)
        t.tape = self
        t.node = len(self._nodes)
        ids = tuple(p.node if p.tape is self else None for p in parents)
        self._nodes.append(_Node(ids, vjp))
        return t

    def backward(self, loss: Tensor) -> Gradients:
        """Gradient of a scalar loss w.r.t. every leaf, visiting each node once."""
        if loss.tape is not self or loss.node is None:
            raise ContractError("loss is not tracked on this tape")
        if loss.data.shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        partial: dict[int, Array] = {loss.node: np.ones((), dtype=np.float64)}
        leaf_grads: dict[int, Array] = {}
        for nid in range(loss.node, -1, -1):
            g = partial.pop(nid, None)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.vjp is None:
                leaf_grads[nid] = g
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                if pid is None or pg is None:
                    continue
                acc = partial.get(pid)
                partial[pid] = pg if acc is None else acc + pg
        return Gradients(self, leaf_grads)


def tensor(data) -> Tensor:
    """Untracked constant tensor."""
    return Tensor(data)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _tape_of(tensors: Iterable[Tensor]) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands live on different tapes")
    return tape


def _emit(data: Array, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _tape_of(parents)
    if tape is None:
        return Tensor._wrap(data)
    return tape._record(data, parents, vjp)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    out = ad * bd

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _emit(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _coerce(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _coerce(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors or two stacked 3-D tensors.

    Gradient rules: dA = G @ B^T, dB = A^T @ G (batched over the leading
    axis in the 3-D case).
    """
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    ok = (
        ad.ndim == bd.ndim
        and ad.ndim in (2, 3)
        and ad.shape[-1] == bd.shape[-2]
        and (ad.ndim == 2 or ad.shape[0] == bd.shape[0])
    )
    if not ok:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    out = np.matmul(ad, bd)

    def vjp(g):
        return np.matmul(g, bd.swapaxes(-1, -2)), np.matmul(ad.swapaxes(-1, -2), g)

    return _emit(out, (a, b), vjp)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _coerce(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    old = a.data.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def index_rows(a, ids: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds."""
    a = _coerce(a)
    if a.ndim != 2:
        raise ShapeError(f"index_rows needs a 2-D tensor, got shape {a.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("index_rows needs a non-empty 1-D index list")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError(f"row index out of range for {a.shape[0]} rows")
    ad = a.data

    def vjp(g):
        out = np.zeros_like(ad)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(ad[idx], (a,), vjp)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit(out, parts, vjp)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ShapeError("stack needs at least one tensor")
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {exc}") from None

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _emit(out, parts, vjp)


def _expand_reduced(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - numpy-style name
    a = _coerce(a)
    shape = a.data.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _emit(out, (a,), lambda g: (_expand_reduced(g, shape, axis, keepdims),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    shape = a.data.shape
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)

    def vjp(g):
        return (_expand_reduced(g, shape, axis, keepdims) / count,)

    return _emit(out, (a,), vjp)


def sqrt(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data < 0):
        raise ContractError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g * (0.5 / out),))


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0):
        raise ContractError("log of a non-positive value")
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,))


def exp(a) -> Tensor:
    a = _coerce(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _coerce(a)
    ad = a.data
    cdf = 0.5 * (1.0 + erf(ad / _SQRT2))
    out = ad * cdf

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * ad * ad)
        return (g * (cdf + ad * pdf),)

    return _emit(out, (a,), vjp)


def softmax_lastdim(a) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    a = _coerce(a)
    if a.ndim == 0 or a.data.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last dimension, got shape {a.shape}")
    m = np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(a.data - np.where(np.isfinite(m), m, 0.0))
    out = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _emit(out, (a,), vjp)


def logsumexp_lastdim(a) -> Tensor:
    """log(sum(exp(x))) over the last axis; -inf entries drop out cleanly."""
    a = _coerce(a)
    if a.ndim == 0 or a.data.shape[-1] < 1:
        raise ShapeError(f"logsumexp needs a non-empty last dimension, got shape {a.shape}")
    m = np.max(a.data, axis=-1, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.squeeze(safe, axis=-1) + np.log(np.sum(np.exp(a.data - safe), axis=-1))
    ad = a.data

    def vjp(g):
        soft = np.exp(ad - np.expand_dims(np.where(np.isfinite(out), out, 0.0), -1))
        soft = np.where(np.isfinite(ad), soft, 0.0)
        return (np.expand_dims(g, -1) * soft,)

    return _emit(out, (a,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _coerce(x), _coerce(gain), _coerce(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match feature dim {d}"
        )
    mu = np.mean(x.data, axis=-1, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma
    out = xhat * gain.data + bias.data
    gd = gain.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = np.sum(g * xhat, axis=lead)
        dbias = np.sum(g, axis=lead)
        dxhat = g * gd
        dx = (
            dxhat
            - np.mean(dxhat, axis=-1, keepdims=True)
            - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
        ) / sigma
        return dx, dgain, dbias

    return _emit(out, (x, gain, bias), vjp)


def stop_gradient(a) -> Tensor:
    """Same values, detached from any tape."""
    a = _coerce(a)
    return Tensor._wrap(a.data.copy())
