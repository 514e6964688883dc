"""Reverse-mode accumulation over numpy arrays.

A :class:`Var` wraps a float or ndarray and remembers how it was produced.
Calling :func:`backward` on a scalar output walks the graph once in reverse
topological order. Only the primitives needed by the heat-conduction losses
are provided: arithmetic with broadcasting, constant powers, exp, tanh,
softplus, reductions and indexing. Custom primitives (the network jet) are
attached with :meth:`Var.custom`.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Var",
    "backward",
    "value_and_grad",
    "exp",
    "tanh",
    "softplus",
    "square",
    "mean",
    "total",
    "value_of",
]


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _shape(x):
    return np.shape(x)


class Var:
    __slots__ = ("value", "parents", "__weakref__")

    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=()):
        self.value = value
        self.parents = parents

    @classmethod
    def custom(cls, value, parents):
        """Node with user-supplied vector-Jacobian products.

        ``parents`` is a sequence of ``(Var, vjp)`` where ``vjp(g)`` maps the
        output adjoint to the adjoint of that parent.
        """
        return cls(value, tuple(parents))

    @property
    def shape(self):
        return _shape(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Var):
            sa, sb = self.shape, other.shape
            return Var(self.value + other.value,
                       ((self, lambda g: _unbroadcast(g, sa)),
                        (other, lambda g: _unbroadcast(g, sb))))
        sa = self.shape
        return Var(self.value + other, ((self, lambda g: _unbroadcast(g, sa)),))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        if isinstance(other, Var):
            sa, sb = self.shape, other.shape
            return Var(self.value - other.value,
                       ((self, lambda g: _unbroadcast(g, sa)),
                        (other, lambda g: -_unbroadcast(g, sb))))
        sa = self.shape
        return Var(self.value - other, ((self, lambda g: _unbroadcast(g, sa)),))

    def __rsub__(self, other):
        sa = self.shape
        return Var(other - self.value, ((self, lambda g: -_unbroadcast(g, sa)),))

    def __mul__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            sa, sb = self.shape, other.shape
            return Var(a * b,
                       ((self, lambda g: _unbroadcast(g * b, sa)),
                        (other, lambda g: _unbroadcast(g * a, sb))))
        sa = self.shape
        return Var(self.value * other,
                   ((self, lambda g: _unbroadcast(g * other, sa)),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            sa, sb = self.shape, other.shape
            return Var(a / b,
                       ((self, lambda g: _unbroadcast(g / b, sa)),
                        (other, lambda g: _unbroadcast(-g * a / (b * b), sb))))
        sa = self.shape
        return Var(self.value / other,
                   ((self, lambda g: _unbroadcast(g / other, sa)),))

    def __rtruediv__(self, other):
        b = self.value
        sa = self.shape
        return Var(other / b, ((self, lambda g: _unbroadcast(-g * other / (b * b), sa)),))

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        a = self.value
        if p == 2:
            return Var(a * a, ((self, lambda g: 2.0 * g * a),))
        return Var(a ** p, ((self, lambda g: g * p * a ** (p - 1)),))

    def __getitem__(self, idx):
        shape = self.shape
        out = self.value[idx]

        def vjp(g):
            full = np.zeros(shape)
            if _needs_add_at(idx):
                np.add.at(full, idx, g)
            else:
                full[idx] = g
            return full

        return Var(out, ((self, vjp),))

    def sum(self):
        shape = self.shape
        return Var(np.sum(self.value), ((self, lambda g: np.broadcast_to(g, shape)),))

    def mean(self):
        shape = self.shape
        n = np.size(self.value)
        return Var(np.mean(self.value),
                   ((self, lambda g: np.broadcast_to(g / n, shape)),))


def _needs_add_at(idx):
    if isinstance(idx, tuple):
        return any(isinstance(i, (list, np.ndarray)) for i in idx)
    return isinstance(idx, (list, np.ndarray))


def value_of(x):
    return x.value if isinstance(x, Var) else x


def exp(x):
    if isinstance(x, Var):
        e = np.exp(x.value)
        return Var(e, ((x, lambda g: g * e),))
    return np.exp(x)


def tanh(x):
    if isinstance(x, Var):
        t = np.tanh(x.value)
        return Var(t, ((x, lambda g: g * (1.0 - t * t)),))
    return np.tanh(x)


def softplus(x):
    if isinstance(x, Var):
        s = expit(x.value)
        return Var(np.logaddexp(0.0, x.value), ((x, lambda g: g * s),))
    return np.logaddexp(0.0, x)


def square(x):
    return x * x if not isinstance(x, Var) else x ** 2


def mean(x):
    return x.mean() if isinstance(x, Var) else np.mean(x)


def total(x):
    return x.sum() if isinstance(x, Var) else np.sum(x)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root, leaves):
    """Adjoints of scalar ``root`` with respect to each Var in ``leaves``.

    Leaves that do not influence ``root`` get zero adjoints of their shape.
    """
    if np.ndim(root.value) != 0:
        raise ValueError("backward() needs a scalar output")
    order = _toposort(root)
    adj = {id(root): np.float64(1.0)}
    for node in reversed(order):
        g = adj.pop(id(node), None) if node.parents else adj.get(id(node))
        if g is None or not node.parents:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + contrib
            else:
                adj[key] = contrib
    out = []
    for leaf in leaves:
        g = adj.get(id(leaf))
        if g is None:
            g = np.zeros(leaf.shape)
        out.append(np.asarray(g, dtype=np.float64).reshape(leaf.shape))
    return out


def value_and_grad(fn, *args):
    """Evaluate scalar ``fn(*vars)`` and its gradient with respect to every argument."""
    leaves = [Var(np.asarray(a, dtype=np.float64)) for a in args]
    out = fn(*leaves)
    if not isinstance(out, Var):
        return float(out), [np.zeros(np.shape(a)) for a in args]
    return float(out.value), backward(out, leaves)
