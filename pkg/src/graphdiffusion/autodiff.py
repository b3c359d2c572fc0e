"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

A tape of `Tensor` nodes; every op records a vector-Jacobian closure. Only
the primitives the denoiser needs are implemented: elementwise arithmetic,
matmul, reductions, gather/segment-sum, concat/reshape, and a few
nonlinearities. Gradients are exact and deterministic (np.add.at accumulation
order is fixed by construction).
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "constant", "parameter", "no_grad", "grad_enabled",
    "add", "sub", "mul", "div", "neg", "matmul", "relu", "exp", "log",
    "sqrt", "clip_min", "reduce_sum", "reduce_mean", "reduce_max",
    "reduce_min", "gather", "segment_sum", "concat", "reshape", "backward",
]

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context (pure evaluation)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_vjp", "_req")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = value if isinstance(value, np.ndarray) else \
            np.asarray(value, dtype=np.float64)
        self.grad = None
        if parents and grad_enabled() and any(p._req for p in parents):
            self._parents = parents
            self._vjp = vjp
            self._req = True
        else:
            self._parents = ()
            self._vjp = None
            self._req = requires_grad
    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def parameter(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.value.shape),
                             _unbroadcast(g, b.value.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return Tensor(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.value.shape),
                             _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return Tensor(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.value.shape),
                             _unbroadcast(g * a.value, b.value.shape)))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return Tensor(a.value / b.value, (a, b),
                  lambda g: (_unbroadcast(g / b.value, a.value.shape),
                             _unbroadcast(-g * a.value / (b.value * b.value),
                                          b.value.shape)))


def neg(a) -> Tensor:
    a = _wrap(a)
    return Tensor(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return Tensor(a.value @ b.value, (a, b),
                  lambda g: (g @ b.value.T, a.value.T @ g))


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.value > 0
    return Tensor(np.where(mask, a.value, 0.0), (a,),
                  lambda g: (np.where(mask, g, 0.0),))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.value)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.value)
    return Tensor(out, (a,), lambda g: (g * (0.5 / out),))


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo); gradient flows only where a > lo."""
    a = _wrap(a)
    mask = a.value > lo
    return Tensor(np.where(mask, a.value, lo), (a,),
                  lambda g: (np.where(mask, g, 0.0),))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Tensor(np.asarray(out, dtype=np.float64), (a,), vjp)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.value.shape).copy() / count,)

    return Tensor(np.asarray(out, dtype=np.float64), (a,), vjp)


def _extreme(a, axis: int, picker) -> Tensor:
    a = _wrap(a)
    idx = picker(a.value, axis=axis)
    out = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis
                             ).squeeze(axis)

    def vjp(g):
        z = np.zeros_like(a.value)
        np.put_along_axis(z, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis)
        return (z,)

    return Tensor(out, (a,), vjp)


def reduce_max(a, axis: int = 0) -> Tensor:
    """Max over one axis; ties route the gradient to the first winner."""
    return _extreme(a, axis, np.argmax)


def reduce_min(a, axis: int = 0) -> Tensor:
    return _extreme(a, axis, np.argmin)


def gather(a, indices) -> Tensor:
    """Row selection a[indices] along axis 0 (indices may repeat)."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        z = np.zeros_like(a.value)
        np.add.at(z, idx, g)
        return (z,)

    return Tensor(a.value[idx], (a,), vjp)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """out[k] = sum of rows of `a` whose segment id is k (axis 0)."""
    a = _wrap(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + a.value.shape[1:], dtype=np.float64)
    np.add.at(out, seg, a.value)
    return Tensor(out, (a,), lambda g: (g[seg],))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.value for t in ts], axis=axis), tuple(ts), vjp)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    orig = a.value.shape
    return Tensor(a.value.reshape(shape), (a,),
                  lambda g: (g.reshape(orig),))


def backward(t: Tensor):
    """Accumulate gradients of the scalar `t` into every reachable leaf."""
    if t.value.size != 1:
        raise ValueError("backward requires a scalar output")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    t.grad = np.ones_like(t.value)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p._req:
                continue
            p.grad = g if p.grad is None else p.grad + g


# --- composite layers ---------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor,
               eps: float = 1e-8) -> Tensor:
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, constant(eps))))
    return add(mul(normed, scale), shift)


def softmax_rows(x: Tensor) -> Tensor:
    shift = x.value.max(axis=-1, keepdims=True)   # detached, constant shift
    e = exp(sub(x, constant(shift)))
    return div(e, reduce_sum(e, axis=-1, keepdims=True))


def segment_softmax(scores: Tensor, segment_ids: np.ndarray,
                    num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id; empty segments never queried."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    mx = np.full((num_segments,) + scores.value.shape[1:], -np.inf)
    np.maximum.at(mx, seg, scores.value)
    e = exp(sub(scores, constant(mx[seg])))
    denom = segment_sum(e, seg, num_segments)
    return div(e, gather(denom, seg))
