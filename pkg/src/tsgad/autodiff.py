"""Reverse-mode automatic differentiation over dense float64 arrays.

A dynamic tape: every operation on tensors that require gradients records
its parents and a backward rule on the result node. ``backward`` walks the
recorded graph once in reverse topological order, so every input node is
visited after all of its consumers and each ``requires_grad`` leaf ends up
with d(loss)/d(leaf) accumulated additively. Call ``zero_grad`` (or set
``t.grad = None``) between optimizer steps.

All arrays are float64 and row-major. Shape-changing ops (reshape,
transpose, slicing, flip) return copies, never views, so mutating an
output can never alias an input.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _make(cls, data, parents, backward):
        """Internal node constructor; takes ownership of ``data`` (no copy)."""
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = bool(parents)
        t._parents = parents
        t._backward = backward
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracking(*tensors):
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data
    if not _tracking(a, b):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.data.shape))

    return Tensor._make(out_data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data
    if not _tracking(a, b):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-grad, b.data.shape))

    return Tensor._make(out_data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data
    if not _tracking(a, b):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.data.shape))

    return Tensor._make(out_data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data
    if not _tracking(a, b):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-grad * a.data / (b.data * b.data), b.data.shape))

    return Tensor._make(out_data, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    out_data = -a.data
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(-grad)

    return Tensor._make(out_data, (a,), backward)


def power(a, exponent):
    """Elementwise power with a constant (non-tensor) exponent."""
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data**exponent
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad * exponent * a.data ** (exponent - 1.0))

    return Tensor._make(out_data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad * out_data)

    return Tensor._make(out_data, (a,), backward)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out_data = np.log(a.data)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad / a.data)

    return Tensor._make(out_data, (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt: input must be nonnegative")
    out_data = np.sqrt(a.data)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad * 0.5 / np.maximum(out_data, 1e-300))

    return Tensor._make(out_data, (a,), backward)


def absolute(a):
    """|x| with subgradient 0 at x == 0."""
    a = as_tensor(a)
    out_data = np.abs(a.data)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad * np.sign(a.data))

    return Tensor._make(out_data, (a,), backward)


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad * (a.data > 0.0))

    return Tensor._make(out_data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0.0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad * out_data * (1.0 - out_data))

    return Tensor._make(out_data, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad * (1.0 - out_data * out_data))

    return Tensor._make(out_data, (a,), backward)


def softmax_rows(a):
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        inner = (grad * out_data).sum(axis=-1, keepdims=True)
        a._accumulate((grad - inner) * out_data)

    return Tensor._make(out_data, (a,), backward)


def dropout(a, p, rng):
    """Inverted dropout; the mask is drawn from ``rng`` and kept constant."""
    if p <= 0.0:
        return as_tensor(a)
    if p >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = 1.0 - p
    mask = (rng.random(as_tensor(a).data.shape) < keep) / keep
    return mul(a, Tensor(mask))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b):
    """Matrix product; both operands 2-D or stacked (batched) 3-D+."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul requires >=2-D operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out_data = np.matmul(a.data, b.data)
    if not _tracking(a, b):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        if a.requires_grad:
            da = np.matmul(grad, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(da, a.data.shape))
        if b.requires_grad:
            db = np.matmul(np.swapaxes(a.data, -1, -2), grad)
            b._accumulate(_unbroadcast(db, b.data.shape))

    return Tensor._make(out_data, (a, b), backward)


def transpose(a, axes=None):
    """Transpose (last two axes by default for ndim > 2)."""
    a = as_tensor(a)
    if axes is None:
        if a.data.ndim < 2:
            raise ValueError("transpose requires >=2-D input")
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes).copy()
    if not _tracking(a):
        return Tensor._make(out_data, (), None)
    inverse = tuple(np.argsort(axes))

    def backward(grad):
        a._accumulate(np.transpose(grad, inverse))

    return Tensor._make(out_data, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape).copy()
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad.reshape(a.data.shape))

    return Tensor._make(out_data, (a,), backward)


def take(a, key):
    """Basic indexing/slicing; backward scatter-adds into the source shape."""
    a = as_tensor(a)
    out_data = np.array(a.data[key], dtype=np.float64)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        buf = np.zeros_like(a.data)
        np.add.at(buf, key, grad)
        a._accumulate(buf)

    return Tensor._make(out_data, (a,), backward)


def flip_last(a):
    """Reverse the last axis (a permutation, |det| = 1)."""
    a = as_tensor(a)
    out_data = a.data[..., ::-1].copy()
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        a._accumulate(grad[..., ::-1])

    return Tensor._make(out_data, (a,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not (_grad_enabled and any(t.requires_grad for t in tensors)):
        return Tensor._make(out_data, (), None)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        moved = np.moveaxis(grad, axis, 0)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(np.moveaxis(moved[lo:hi], 0, axis))

    return Tensor._make(out_data, tuple(tensors), backward)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    out_data = np.asarray(out_data, dtype=np.float64)
    if not _tracking(a):
        return Tensor._make(out_data, (), None)

    def backward(grad):
        g = np.asarray(grad)
        if axis is not None and not keepdims:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(ax % a.data.ndim for ax in axes)
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return Tensor._make(out_data, (a,), backward)


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# backward driver


def _topo_order(root):
    """Iterative DFS post-order; every parent precedes its consumers."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Run one reverse pass from a scalar loss, filling leaf ``grad`` buffers."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not connected to any requires_grad tensor")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node is not loss:
                node.grad = None  # free intermediate buffers
