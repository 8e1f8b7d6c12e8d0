"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable op records its
parents and a backward closure on the output; :func:`backward` collects the
reachable part of that record into a :class:`GradientTape` (creation order is
a valid topological order) and replays it in reverse.

Training runs in float32. Gradient checks switch to float64 with
:func:`precision`.
"""
from __future__ import annotations

import contextlib
import itertools

import numpy as np

_counter = itertools.count()
_state = {"grad": True, "dtype": np.float32, "check_finite": False}


def get_default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def is_grad_enabled():
    return _state["grad"]


@contextlib.contextmanager
def detect_nonfinite(enabled=True):
    """Raise FloatingPointError as soon as an op produces NaN or inf."""
    old = _state["check_finite"]
    _state["check_finite"] = enabled
    try:
        yield
    finally:
        _state["check_finite"] = old


class Tensor:
    __array_priority__ = 1000
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = _state["dtype"]
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_counter)
        self.op = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out._seq = next(_counter)
        if _state["check_finite"] and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite values produced by {op}")
        if _state["grad"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype):
        """Differentiable dtype cast."""
        src = self.data.dtype
        return Tensor._from_op(
            self.data.astype(dtype), (self,), lambda g: (g.astype(src),), "astype"
        )

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(a, b):
    """Turn python/numpy scalars into constants matching the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return a, b


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- tape ---------------------------------------------------------------------


class GradientTape:
    """Recorded ops reachable from one output, in creation order.

    Each entry is ``(output, parents, backward_rule)``; because a tensor is
    always created after its inputs, sorting by creation index gives a
    topological order.
    """

    def __init__(self, root):
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        self.root = root
        self.nodes = nodes

    @property
    def operations(self):
        return [(t, t._parents, t._backward) for t in self.nodes if t._backward is not None]

    @property
    def leaves(self):
        return [t for t in self.nodes if t._backward is None]

    def replay(self, seed):
        for t in self.nodes:
            if t._backward is not None:
                t.grad = None
        if self.root._backward is None:
            self.root.grad = seed if self.root.grad is None else self.root.grad + seed
            return
        self.root.grad = seed
        for t in reversed(self.nodes):
            if t._backward is None or t.grad is None:
                continue
            grads = t._backward(t.grad)
            for parent, g in zip(t._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.dtype != parent.data.dtype:
                    g = g.astype(parent.data.dtype)
                parent.grad = g if parent.grad is None else parent.grad + g
            t.grad = None


def backward(loss):
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls until cleared.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    GradientTape(loss).replay(np.ones_like(loss.data))


# -- elementwise ----------------------------------------------------------------


def add(a, b):
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add"
    )


def sub(a, b):
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub"
    )


def mul(a, b):
    a, b = _lift(a, b)

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _lift(a, b)
    out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), bw, "div")


def neg(a):
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    exponent = float(exponent)
    if exponent == 2.0:
        return Tensor._from_op(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")
    out = a.data ** exponent
    return Tensor._from_op(
        out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow"
    )


def exp(a):
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def absolute(a):
    return Tensor._from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sigmoid(a):
    out = 0.5 * (1 + np.tanh(0.5 * a.data))
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def leaky_relu(a, slope=0.1):
    pos = a.data > 0
    out = np.where(pos, a.data, a.data * a.dtype.type(slope))
    return Tensor._from_op(
        out, (a,), lambda g: (np.where(pos, g, g * g.dtype.type(slope)),), "leaky_relu"
    )


def relu(a):
    return leaky_relu(a, 0.0)


# -- reductions and shape ---------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    src = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def getitem(a, index):
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        if _fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._from_op(np.ascontiguousarray(a.data[index]), (a,), bw, "getitem")


def _fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat"
    )


def split(a, sizes, axis=0):
    out = []
    start = 0
    for n in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + n)
        out.append(getitem(a, tuple(idx)))
        start += n
    return out


def matmul(a, b):
    """Batched matrix product over the last two axes (no broadcasting of batch)."""

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), bw, "matmul")
