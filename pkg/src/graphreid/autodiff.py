"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps a numpy array together with an optional gradient buffer and
links to the tensors it was computed from. Calling ``backward()`` on a
scalar walks the recorded graph in reverse topological order and accumulates
gradients into every reachable tensor that requires them. Forward values are
never mutated; only ``grad`` buffers are written.

All math runs in the dtype of the operands (float32 for training, float64
for numerical gradient checks). Mixing dtypes in one expression is an error.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(Exception):
    """Base class for tensor-core failures."""


class ShapeError(AutodiffError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(AutodiffError):
    """A forward or backward pass produced NaN or Inf."""


# Module switch: validate that every op output (and every gradient after a
# backward pass) is finite. Costs one isfinite scan per op; cheap at the
# array sizes this package works with.
_CHECK_FINITE = True


def set_finite_checks(enabled):
    """Enable or disable NaN/Inf validation. Returns the previous setting."""
    global _CHECK_FINITE
    previous = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return previous


def _check_finite(arr, op_name):
    if _CHECK_FINITE and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by '{op_name}'")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Tensor:
    """Dense real array (rank 0..4) with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        if self.data.ndim > 4:
            raise ShapeError(f"rank {self.data.ndim} exceeds the rank-4 limit")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def item(self):
        return float(self.data)

    def detach(self):
        """A grad-free view of the same values."""
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- graph construction ------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            if other.data.dtype != self.data.dtype:
                raise AutodiffError(
                    f"dtype mismatch: {self.data.dtype} vs {other.data.dtype}")
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def backward(self):
        """Populate grads of every requires_grad tensor reachable from self.

        Only defined for scalar outputs (a loss). Gradients accumulate, so
        callers zero parameter grads between steps.
        """
        if self.data.size != 1:
            raise AutodiffError("backward() requires a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        if _CHECK_FINITE:
            for node in order:
                if node.grad is not None and not np.isfinite(node.grad).all():
                    raise NonFiniteError("non-finite gradient during backward")

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __truediv__(self, other):
        return div(self, self._coerce(other))

    def __rtruediv__(self, other):
        return div(self._coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    # method aliases used heavily downstream
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, ax1, ax2):
        return swapaxes(self, ax1, ax2)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def _accumulate(tensor, grad):
    if not tensor.requires_grad and tensor._backward is None:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def _result(data, parents, backward, op_name):
    _check_finite(data, op_name)
    needs = any(p.requires_grad or p._backward is not None for p in parents)
    out = Tensor(data)
    if needs:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- constructors -----------------------------------------------------------

def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def eye(n, dtype=np.float32):
    return Tensor(np.eye(n, dtype=dtype))


def constant(value, like):
    """Scalar constant matching the dtype of `like`."""
    return Tensor(np.asarray(value, dtype=like.data.dtype))


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(data, (a, b), backward, "add")


def sub(a, b):
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(data, (a, b), backward, "sub")


def mul(a, b):
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), backward, "mul")


def div(a, b):
    with np.errstate(all="ignore"):
        data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(data, (a, b), backward, "div")


def neg(a):
    def backward(g):
        _accumulate(a, -g)

    return _result(-a.data, (a,), backward, "neg")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    """Matrix product; leading axes broadcast as a stack of matrices."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _result(data, (a, b), backward, "matmul")


def swapaxes(a, ax1, ax2):
    data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        _accumulate(a, np.swapaxes(g, ax1, ax2))

    return _result(data, (a,), backward, "swapaxes")


def reshape(a, shape):
    data = np.reshape(a.data, shape)

    def backward(g):
        _accumulate(a, np.reshape(g, a.shape))

    return _result(data, (a,), backward, "reshape")


def broadcast_to(a, shape):
    data = np.broadcast_to(a.data, shape)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))

    return _result(data, (a,), backward, "broadcast_to")


def concat(tensors, axis):
    if not tensors:
        raise ShapeError("concat of zero tensors")
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _result(data, tuple(tensors), backward, "concat")


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _result(data, (a,), backward, "narrow")


# -- reductions ----------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _result(data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.ndim else 1
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g / count, a.shape).copy())

    return _result(data, (a,), backward, "mean")


# -- nonlinearities -------------------------------------------------------------

def relu(a):
    data = np.maximum(a.data, 0)

    def backward(g):
        _accumulate(a, g * (a.data > 0))

    return _result(data, (a,), backward, "relu")


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _result(data, (a,), backward, "exp")


def log(a):
    with np.errstate(all="ignore"):
        data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _result(data, (a,), backward, "log")


def sqrt(a):
    with np.errstate(all="ignore"):
        data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / data)

    return _result(data, (a,), backward, "sqrt")


def powf(a, exponent):
    """Elementwise power with a constant float exponent."""
    with np.errstate(all="ignore"):
        data = np.power(a.data, exponent)

    def backward(g):
        _accumulate(a, g * exponent * np.power(a.data, exponent - 1.0))

    return _result(data, (a,), backward, "powf")


def clamp_min(a, floor):
    """max(a, floor); gradient passes only where a > floor."""
    data = np.maximum(a.data, floor)

    def backward(g):
        _accumulate(a, g * (a.data > floor))

    return _result(data, (a,), backward, "clamp_min")


def softmax(a, axis=-1):
    """Softmax along one axis, computed with max-subtraction for stability."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _result(data, (a,), backward, "softmax")


def l2_normalize_rows(a):
    """Scale each last-axis row to unit Euclidean norm.

    All-zero rows pass through unchanged (their gradient is the identity),
    so a zero adjacency row can never trigger a division by zero.
    """
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    data = a.data / safe

    def backward(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - data * inner) / safe)

    return _result(data, (a,), backward, "l2_normalize_rows")


def cast(a, dtype):
    """Dtype conversion that stays differentiable (grad casts back)."""
    if a.data.dtype == dtype:
        return a
    data = a.data.astype(dtype)

    def backward(g):
        _accumulate(a, g.astype(a.data.dtype))

    return _result(data, (a,), backward, "cast")


def logsumexp(a, axis=-1, keepdims=False):
    """log(sum(exp(a))) along an axis; the max shift is treated as constant,
    which leaves both the value and the softmax gradient exact."""
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    summed = tsum(exp(sub(a, shift)), axis=axis, keepdims=True)
    out = add(log(summed), shift)
    if not keepdims:
        squeezed = list(out.shape)
        del squeezed[axis % a.ndim]
        out = reshape(out, tuple(squeezed))
    return out
