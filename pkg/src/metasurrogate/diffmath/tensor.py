"""Tape-based reverse-mode differentiation over dense float64 arrays.

Every primitive in this module accepts either plain ``numpy`` arrays or
:class:`Var` nodes. When no argument is a ``Var`` the primitive evaluates
eagerly and returns an ``ndarray``, so model code written against these
functions runs without any graph overhead at prediction time.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Mapping

import numpy as np

from metasurrogate.errors import DimensionError, UnsupportedOpError

_node_ids = itertools.count()


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "parents", "backward_fn", "op", "uid")
    __array_priority__ = 1000.0

    def __init__(self, value, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.uid = next(_node_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    # numpy reaches for this when an ndarray sits on the left of an operator
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedOpError(f"{ufunc.__name__}.{method}")
        fn = _UFUNC_TABLE.get(ufunc)
        if fn is None:
            raise UnsupportedOpError(ufunc.__name__)
        return fn(*inputs)

    def __array__(self, *args, **kwargs):
        raise UnsupportedOpError("implicit conversion of a graph node to ndarray")

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, power):
        if power == 2:
            return square(self)
        raise UnsupportedOpError(f"pow with exponent {power!r}")

    def __getitem__(self, index):
        return getitem(self, index)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _any_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(value, parents, backward_fn, op):
    # parents are only the Var inputs; backward_fn returns grads aligned with them
    return Var(value, tuple(parents), backward_fn, op)


def _binary(a, b, value, grad_a, grad_b, op):
    parents, fns = [], []
    if isinstance(a, Var):
        parents.append(a)
        fns.append(lambda g: _unbroadcast(grad_a(g), a.value.shape))
    if isinstance(b, Var):
        parents.append(b)
        fns.append(lambda g: _unbroadcast(grad_b(g), b.value.shape))
    return _make(value, parents, lambda g: [f(g) for f in fns], op)


def _unary(x, value, grad_x, op):
    return _make(value, (x,), lambda g: [grad_x(g)], op)


# ---------------------------------------------------------------- primitives


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    if not _any_var(a, b):
        return out
    return _binary(a, b, out, lambda g: g, lambda g: g, "add")


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    if not _any_var(a, b):
        return out
    return _binary(a, b, out, lambda g: g, lambda g: -g, "sub")


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    if not _any_var(a, b):
        return out
    return _binary(a, b, out, lambda g: g * bv, lambda g: g * av, "mul")


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    if not _any_var(a, b):
        return out
    return _binary(a, b, out, lambda g: g / bv, lambda g: -g * av / (bv * bv), "div")


def neg(x):
    if not isinstance(x, Var):
        return -x
    return _unary(x, -x.value, lambda g: -g, "neg")


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise DimensionError(f"matmul expects a matrix on the left, got shapes {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {av.shape} @ {bv.shape}")
    out = av @ bv
    if not _any_var(a, b):
        return out
    if bv.ndim == 1:
        return _binary(a, b, out, lambda g: np.outer(g, bv), lambda g: av.T @ g, "matmul")
    return _binary(a, b, out, lambda g: g @ bv.T, lambda g: av.T @ g, "matmul")


def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    out = np.exp(x.value)
    return _unary(x, out, lambda g: g * out, "exp")


def log(x):
    if not isinstance(x, Var):
        return np.log(x)
    xv = x.value
    return _unary(x, np.log(xv), lambda g: g / xv, "log")


def square(x):
    if not isinstance(x, Var):
        return np.square(x)
    xv = x.value
    return _unary(x, xv * xv, lambda g: 2.0 * g * xv, "square")


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(x)
    out = np.tanh(x.value)
    return _unary(x, out, lambda g: g * (1.0 - out * out), "tanh")


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    mask = x.value > 0.0
    return _unary(x, x.value * mask, lambda g: g * mask, "relu")


def sigmoid(x):
    xv = _val(x)
    out = np.exp(-np.logaddexp(0.0, -xv))
    if not isinstance(x, Var):
        return out
    return _unary(x, out, lambda g: g * out * (1.0 - out), "sigmoid")


def softplus(x):
    xv = _val(x)
    out = np.logaddexp(0.0, xv)
    if not isinstance(x, Var):
        return out
    return _unary(x, out, lambda g: g * np.exp(-np.logaddexp(0.0, -xv)), "softplus")


def minimum(x, bound: float):
    """Elementwise ``min(x, bound)`` against a constant; gradient is zero where clipped."""
    xv = _val(x)
    out = np.minimum(xv, bound)
    if not isinstance(x, Var):
        return out
    mask = xv < bound
    return _unary(x, out, lambda g: g * mask, "minimum")


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    xv = _val(x)
    out = xv.sum(axis=axis)
    if not isinstance(x, Var):
        return out
    shape = xv.shape

    def back(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _unary(x, out, back, "sum")


def mean(x, axis=None):
    xv = _val(x)
    n = xv.size if axis is None else xv.shape[axis]
    return div(sum(x, axis=axis), float(n))


def concat(xs: Iterable, axis: int = -1):
    xs = list(xs)
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not _any_var(*xs):
        return out
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])
    parents = [x for x in xs if isinstance(x, Var)]
    slots = [i for i, x in enumerate(xs) if isinstance(x, Var)]

    def back(g):
        grads = []
        for i in slots:
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(idx)])
        return grads

    return _make(out, parents, back, "concat")


def reshape(x, shape):
    xv = _val(x)
    out = xv.reshape(shape)
    if not isinstance(x, Var):
        return out
    return _unary(x, out, lambda g: g.reshape(xv.shape), "reshape")


def getitem(x, index):
    xv = _val(x)
    out = xv[index]
    if not isinstance(x, Var):
        return out
    shape = xv.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return full

    return _unary(x, np.array(out, dtype=np.float64), back, "getitem")


_UFUNC_TABLE = {
    np.add: add,
    np.subtract: sub,
    np.multiply: mul,
    np.true_divide: div,
    np.negative: neg,
    np.matmul: matmul,
    np.exp: exp,
    np.log: log,
    np.tanh: tanh,
    np.square: square,
}


# ------------------------------------------------------------ reverse sweep


def backward(root: Var) -> dict[int, np.ndarray]:
    """Propagate d(root)/d(node) to every node reachable from ``root``.

    Returns a map from node uid to gradient array.
    """
    if root.value.size != 1:
        raise DimensionError(f"backward needs a scalar root, got shape {root.value.shape}")
    order: list[Var] = []
    seen: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if node.uid in seen:
            continue
        seen.add(node.uid)
        order.append(node)
        stack.extend(node.parents)
    # uids increase in creation order, which is a valid topological order
    order.sort(key=lambda n: n.uid, reverse=True)
    grads = {root.uid: np.ones_like(root.value)}
    for node in order:
        g = grads.get(node.uid)
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if parent.uid in grads:
                grads[parent.uid] = grads[parent.uid] + pg
            else:
                grads[parent.uid] = pg
    return grads


def value_and_gradient(
    loss: Callable[[Mapping[str, Var]], Var], params: Mapping[str, np.ndarray]
) -> tuple[float, dict[str, np.ndarray]]:
    leaves = {name: Var(np.asarray(v, dtype=np.float64)) for name, v in params.items()}
    out = loss(leaves)
    if not isinstance(out, Var):
        # loss never touched a parameter
        value = float(np.asarray(out).reshape(()))
        return value, {name: np.zeros_like(v.value) for name, v in leaves.items()}
    if out.value.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {out.value.shape}")
    grads = backward(out)
    result = {}
    for name, leaf in leaves.items():
        g = grads.get(leaf.uid)
        result[name] = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.value.shape)
    return float(out.value.reshape(())), result


def gradient(loss, params):
    """Gradient of a scalar loss with respect to every entry of ``params``."""
    from metasurrogate.diffmath.params import ParamSet

    _, grads = value_and_gradient(loss, params)
    return ParamSet(grads)
