"""Reverse-mode autodiff over numpy arrays.

A ``Tensor`` wraps an ndarray. Operations on tensors that require gradients
record their parents and a backward closure; ``backward`` walks that graph
in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return len(self.data)

    # arithmetic -------------------------------------------------------

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
        return mul(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _coerce(a, b):
    """Wrap python scalars so they adopt the dtype of the tensor operand."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def add(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _coerce(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(count))


def reshape(x, shape):
    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(x.data.reshape(shape), (x,), backward)


def flatten(x):
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def take(x, key, unique=False):
    """``x[key]``; pass ``unique=True`` when no element is selected twice."""
    out = x.data[key]

    def backward(g):
        full = np.zeros_like(x.data)
        if unique:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Tensor._from_op(np.asarray(out), (x,), backward)


def concat(tensors, axis=1):
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def log(x):
    def backward(g):
        return (g / x.data,)

    return Tensor._from_op(np.log(x.data), (x,), backward)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where clamping is active."""
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return Tensor._from_op(np.clip(x.data, lo, hi), (x,), backward)


def relu(x):
    """max(0, x) with subgradient 0 at x == 0."""
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward)


def square(x):
    def backward(g):
        return (2 * g * x.data,)

    return Tensor._from_op(x.data * x.data, (x,), backward)


def l2norm(x, axis=-1):
    """Euclidean norm along ``axis``; gradient taken as 0 at the origin."""
    n = np.sqrt((x.data * x.data).sum(axis=axis))

    def backward(g):
        nk = np.expand_dims(n, axis)
        safe = np.where(nk > 0, nk, 1)
        return (np.where(nk > 0, np.expand_dims(g, axis) * x.data / safe, 0).astype(x.dtype),)

    return Tensor._from_op(n, (x,), backward)


def backward(loss, wrt=None):
    """Gradients of a scalar ``loss``.

    ``wrt`` is a mapping of name -> leaf Tensor. The result maps the same
    names to gradient arrays; leaves the loss does not reach get zeros. With
    ``wrt=None`` every reachable leaf that requires grad is returned keyed by
    ``id``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    if wrt is None:
        return leaves
    out = {}
    for name, t in wrt.items():
        g = leaves.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.dtype).reshape(t.shape)
    return out
