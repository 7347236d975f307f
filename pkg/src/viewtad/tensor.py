"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a C-contiguous ``numpy`` array. While a
:class:`GradTape` is active, every operation that touches a tensor with
``requires_grad=True`` appends a record (output, inputs, local VJP) to the
tape; ``tape.backward(loss)`` then replays those records in exact reverse
execution order and accumulates gradients per input tensor. Without an
active tape, operations are plain numpy calls wrapped in fresh tensors.

All forward results are checked for NaN/Inf (disable with
``set_finite_checks(False)`` for micro-benchmarks only). Tensors are never
mutated by operations; the optimizer updates parameter buffers in place
between tapes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "Gradients",
    "NonFiniteError",
    "set_finite_checks",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "reshape",
    "transpose",
    "getitem",
    "scatter",
    "pad",
    "stack",
    "tsum",
    "tmean",
    "power",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "as_tensor",
    "record_op",
]


class NonFiniteError(ArithmeticError):
    """A forward operation produced NaN or Inf."""


_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """N-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = _as_c_array(data)
        if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)

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
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_c_array(data) -> np.ndarray:
    """float64, C-contiguous; preserves 0-d shape (ascontiguousarray does not)."""
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# ---------------------------------------------------------------------------
# tape machinery


class Gradients:
    """Gradient buffers produced by one backward pass, keyed by tensor identity."""

    def __init__(self):
        self._by_id = {}

    def _accumulate(self, tensor, grad):
        entry = self._by_id.get(id(tensor))
        if entry is None:
            self._by_id[id(tensor)] = [tensor, grad.copy()]
        else:
            entry[1] += grad

    def __contains__(self, tensor):
        return id(tensor) in self._by_id

    def __getitem__(self, tensor) -> np.ndarray:
        entry = self._by_id.get(id(tensor))
        if entry is None:
            raise KeyError(
                "tensor has no gradient: it was not reached from the loss on this tape"
            )
        return entry[1]

    def get(self, tensor, default=None):
        entry = self._by_id.get(id(tensor))
        return default if entry is None else entry[1]


class GradTape:
    """Ordered record of executed operations, used as a context manager.

    Nested tapes are not supported; one tape per training thread.
    """

    def __init__(self):
        self._records = []  # (out_id, inputs, vjp) in execution order
        self._tracked = set()  # ids of tensors that appear on the tape

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def _record(self, out, inputs, vjp):
        self._records.append((id(out), inputs, vjp))
        self._tracked.add(id(out))
        for t in inputs:
            self._tracked.add(id(t))

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d(loss)/d(tensor) for every tensor reachable from ``loss``."""
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._tracked:
            raise ValueError("loss tensor was not produced on this tape")
        grads = Gradients()
        grads._accumulate(loss, np.ones_like(loss.data))
        # reverse execution order is a valid topological order of the DAG
        for out_id, inputs, vjp in reversed(self._records):
            entry = grads._by_id.get(out_id)
            if entry is None:
                continue
            input_grads = vjp(entry[1])
            for tensor, grad in zip(inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.data.shape:
                    raise ValueError(
                        f"gradient shape {grad.shape} does not match tensor shape "
                        f"{tensor.data.shape}"
                    )
                grads._accumulate(tensor, grad)
        return grads


_TAPE_STACK: list[GradTape] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(out_data, inputs, vjp) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record the op on the active tape.

    ``vjp(grad_out)`` must return one gradient array (or None) per input.
    This is the extension point used by fused ops (losses, the scan kernel).
    """
    if _FINITE_CHECKS and not np.all(np.isfinite(out_data)):
        raise NonFiniteError("operation produced non-finite values")
    tape = _active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = _as_c_array(out_data)
    out.requires_grad = needs_grad
    if needs_grad:
        tape._record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record_op(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return record_op(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return record_op(out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return record_op(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return record_op(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """numpy ``matmul`` semantics, including broadcast over batch dims."""
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            bt = np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else b.data
            ga = np.matmul(g, bt) if b.data.ndim > 1 else np.multiply.outer(g, b.data)
            ga = _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            at = np.swapaxes(a.data, -1, -2) if a.data.ndim > 1 else a.data
            gb = np.matmul(at, g)
            gb = _unbroadcast(gb, b.data.shape)
        return ga, gb

    return record_op(out, (a, b), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return record_op(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return record_op(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int/ellipsis) indexing; steps, including negative, allowed."""
    out = a.data[key]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return record_op(out, (a,), vjp)


def scatter(a: Tensor, shape, key) -> Tensor:
    """Place ``a`` into a zero tensor of ``shape`` at ``key`` (inverse of getitem)."""
    out = np.zeros(shape, dtype=np.float64)
    out[key] = a.data
    return record_op(out, (a,), lambda g: (np.ascontiguousarray(g[key]),))


def pad(a: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows ``np.pad`` conventions."""
    out = np.pad(a.data, pad_width)
    inner = tuple(
        slice(before, before + n) for (before, _), n in zip(pad_width, a.data.shape)
    )
    return record_op(out, (a,), lambda g: (np.ascontiguousarray(g[inner]),))


def stack(tensors, axis=0) -> Tensor:
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        pieces = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(pieces[i]) for i in range(len(tensors)))

    return record_op(out, tuple(tensors), vjp)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    axes = _normalize_axes(axis, a.data.ndim)

    def vjp(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return record_op(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    axes = _normalize_axes(axis, a.data.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = int(np.prod([a.data.shape[i] for i in axes]))

    def vjp(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy() / count,)

    return record_op(out, (a,), vjp)


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent
    return record_op(
        out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),)
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return record_op(out, (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return record_op(out, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    out = sigmoid_np(a.data)
    return record_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on raw arrays."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
