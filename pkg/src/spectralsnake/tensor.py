"""Minimal dense tensor with reverse-mode automatic differentiation.

Values are numpy arrays (float32 by default, float64 supported for test
oracles). Every operation that participates in training builds a dynamic
tape; calling backward() on a scalar walks the tape once and then frees it.
"""

from __future__ import annotations

import contextlib

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible, naming the offending dimension."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


def _unbroadcast(grad, shape):
    # Sum out broadcast dimensions so grad matches the original operand shape.
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense n-dimensional float array, optionally tracked on a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def from_op(data, parents, backward, requires_grad):
        t = Tensor.__new__(Tensor)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        if requires_grad and _grad_enabled:
            t._parents = tuple(parents)
            t._backward = backward
        else:
            t._parents = ()
            t._backward = None
        return t

    # -- basic introspection --------------------------------------------------

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

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=False)

    # -- autograd -------------------------------------------------------------

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor; frees the tape afterwards."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._parents = ()
            node._backward = None

    def zero_grad(self):
        self.grad = None

    # -- elementwise arithmetic -----------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.data.shape))

        return Tensor.from_op(out_data, (a, b), backward, a.requires_grad or b.requires_grad)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(-g)

        return Tensor.from_op(-a.data, (a,), backward, a.requires_grad)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

        return Tensor.from_op(out_data, (a, b), backward, a.requires_grad or b.requires_grad)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data / b.data

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor.from_op(out_data, (a, b), backward, a.requires_grad or b.requires_grad)

    def __pow__(self, exponent):
        a = self
        p = float(exponent)
        out_data = a.data ** p

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(g * p * a.data ** (p - 1.0))

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(g.reshape(a.data.shape))

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    def moveaxis(self, src, dst):
        a = self
        out_data = np.ascontiguousarray(np.moveaxis(a.data, src, dst))

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(np.moveaxis(g, dst, src))

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    def transpose(self, axes):
        a = self
        axes = tuple(axes)
        inv = np.argsort(axes)
        out_data = np.ascontiguousarray(a.data.transpose(axes))

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(g.transpose(inv))

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    def flip(self, axis):
        a = self

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(np.flip(g, axis=axis))

        return Tensor.from_op(np.ascontiguousarray(np.flip(a.data, axis=axis)), (a,), backward, a.requires_grad)

    def __getitem__(self, key):
        a = self
        out_data = np.ascontiguousarray(a.data[key])
        parts = key if isinstance(key, tuple) else (key,)
        basic = all(isinstance(p, (slice, int)) or p is Ellipsis for p in parts)

        def backward(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                if basic:  # basic slices never alias, so assignment is enough
                    buf[key] = g
                else:
                    np.add.at(buf, key, g)
                a.accumulate_grad(buf)

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    @staticmethod
    def cat(tensors, axis=0):
        tensors = list(tensors)
        datas = [t.data for t in tensors]
        out_data = np.concatenate(datas, axis=axis)
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)
        requires = any(t.requires_grad for t in tensors)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t.accumulate_grad(np.ascontiguousarray(g[tuple(idx)]))

        return Tensor.from_op(out_data, tensors, backward, requires)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for i in ax:
                n *= self.data.shape[i]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def cumsum(self, axis):
        a = self
        out_data = np.cumsum(a.data, axis=axis)

        def backward(g):
            if a.requires_grad:
                rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
                a.accumulate_grad(np.ascontiguousarray(rev))

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    # -- nonlinearities ---------------------------------------------------------

    def relu(self):
        a = self
        out_data = np.maximum(a.data, 0)

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(g * (a.data > 0))

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(g * (1.0 - out_data * out_data))

        return Tensor.from_op(out_data, (a,), backward, a.requires_grad)

    # -- linear algebra ---------------------------------------------------------

    def __matmul__(self, other):
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(
                f"matmul inner dimensions differ: {a.data.shape[1]} vs {b.data.shape[0]}"
            )
        out_data = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)

        return Tensor.from_op(out_data, (a, b), backward, a.requires_grad or b.requires_grad)


def relu(x):
    """out[i] = max(0, x[i]); gradient passes only through positive entries."""
    return x.relu()


def tanh(x):
    return x.tanh()
