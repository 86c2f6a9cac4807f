"""Reverse-mode automatic differentiation over dense numpy arrays.

Operations executed while a :class:`Tape` is active are recorded; a single
``tape.backward(loss)`` walk in reverse order populates ``.grad`` on every
tensor with ``requires_grad`` that appeared on the tape.  Without an active
tape, operations are plain numpy forward computations (inference mode).

The tape is single-threaded per training context; tensors whose data is
populated and that are not attached to a live tape are plain immutable
values.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ParameterError, ShapeError, StateError

_DEFAULT_DTYPE = np.dtype(np.float32)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for tensors created from non-float data."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ParameterError(f"unsupported default dtype {dt}")
    _DEFAULT_DTYPE = dt


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


class Tensor:
    """Dense n-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # arithmetic sugar; constants are coerced to untracked tensors
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


class _Node:
    __slots__ = ("outs", "inputs", "backward", "multi")

    def __init__(self, outs: tuple, inputs: tuple, backward: Callable, multi: bool):
        self.outs = outs
        self.inputs = inputs
        self.backward = backward
        self.multi = multi


class Tape:
    """Ordered record of executed operations for one reverse pass.

    Records are appended in execution order, so inputs of every record were
    produced by earlier records or are leaves; one backward traversal visits
    each record exactly once, in reverse.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self._records: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = Tape._stack.pop()
        assert popped is self
        return False

    @classmethod
    def current(cls) -> Optional["Tape"]:
        return cls._stack[-1] if cls._stack else None

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every requires_grad tensor on this tape.

        Gradients accumulate additively across multiple uses of a tensor
        within the graph, and across repeated backward() calls.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self._records:
            raise StateError("backward on an empty tape")
        if not any(any(o is loss for o in node.outs) for node in self._records):
            raise StateError("loss tensor was not produced on this tape")

        flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._records):
            if node.multi:
                gs = [flowing.get(id(o)) for o in node.outs]
                if all(g is None for g in gs):
                    continue
                input_grads = node.backward(gs)
            else:
                g = flowing.get(id(node.outs[0]))
                if g is None:
                    continue
                input_grads = node.backward(g)
            for inp, gi in zip(node.inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = flowing.get(key)
                flowing[key] = gi if prev is None else prev + gi

        # every requires_grad tensor on the tape ends with a populated grad,
        # including ones on dead branches (zero gradient)
        seen: dict[int, Tensor] = {}
        for node in self._records:
            for t in (*node.outs, *node.inputs):
                if t.requires_grad:
                    seen[id(t)] = t
        for key, t in seen.items():
            g = flowing.get(key)
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g if t.grad is None else t.grad + g


def record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
    """Attach a custom operation to the active tape, if any.

    ``backward(upstream_grad)`` must return one gradient array (or None)
    per input, aligned with ``inputs``.
    """
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape._records.append(_Node((out,), tuple(inputs), backward, multi=False))


def record_multi(outs: Sequence[Tensor], inputs: Sequence[Tensor], backward: Callable) -> None:
    """Attach a multi-output operation to the active tape, if any.

    ``backward(list_of_output_grads)`` receives one entry per output (None
    where no gradient flows) and returns one gradient per input.
    """
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape._records.append(_Node(tuple(outs), tuple(inputs), backward, multi=True))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    record(out, (a, b), backward)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.data.shape) if b.requires_grad else None
        return ga, gb

    record(out, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    record(out, (a, b), backward)
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    record(out, (a, b), backward)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (-g,))
    return out


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * np.sign(a.data),))
    return out


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a scalar; gradient passes where a > floor."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, floor), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * (a.data > floor),))
    return out


def minimum(a, ceil: float) -> Tensor:
    """Elementwise min with a scalar; gradient passes where a < ceil."""
    a = as_tensor(a)
    out = Tensor(np.minimum(a.data, ceil), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * (a.data < ceil),))
    return out


# ---------------------------------------------------------------------------
# transcendental / activations


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * out.data,))
    return out


def log(a) -> Tensor:
    """Natural log; callers clamp non-positive inputs before calling."""
    a = as_tensor(a)
    out = Tensor(np.log(a.data), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g / a.data,))
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * (0.5 / out.data),))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form is stable for large |x|
    out = Tensor(0.5 * (1.0 + np.tanh(0.5 * a.data)), requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * out.data * (1.0 - out.data),))
    return out


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    out = Tensor(a.data * factor, requires_grad=a.requires_grad)
    record(out, (a,), lambda g: (g * factor,))
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; rows sum to 1."""
    a = as_tensor(a)
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def backward(g):
        s = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - s),)

    record(out, (a,), backward)
    return out


def normalize_last_axis(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalization along the last axis.

    Fused forward and backward; the backward is the standard
    normalization gradient (1/sigma) * (g - mean(g) - y * mean(g*y)).
    """
    a = as_tensor(a)
    m = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - m
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    out = Tensor(y, requires_grad=a.requires_grad)

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    record(out, (a,), backward)
    return out


def gradient_reverse(a, lam: float) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -lam.

    With lam == 0 the backward contribution is exactly zero, fully
    detaching whatever sits behind the reversal.
    """
    if lam < 0:
        raise ParameterError(f"reversal strength must be non-negative, got {lam}")
    a = as_tensor(a)
    out = Tensor(a.data.copy(), requires_grad=a.requires_grad)

    def backward(g):
        if lam == 0:
            return (np.zeros_like(g),)
        return ((-lam) * g,)

    record(out, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra / structured ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    record(out, (a, b), backward)
    return out


def matmul_nd(a, b) -> Tensor:
    """Matrix product over the last two axes with numpy broadcasting on the
    leading (batch) axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul_nd: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    record(out, (a, b), backward)
    return out


def conv1d(x, kernels, stride: int = 1) -> Tensor:
    """Valid (no padding) 1-d cross-correlation.

    ``x`` is ``[C_in, L]`` or batched ``[N, C_in, L]``; ``kernels`` is
    ``[C_out, C_in, K]``.  Output length is ``(L - K) // stride + 1``.
    The unfolded window matrix is materialized once and shared between the
    forward product and the kernel-gradient product.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if not isinstance(stride, int) or stride < 1:
        raise ParameterError(f"stride must be a positive integer, got {stride}")
    xd = x.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    if xd.ndim != 3 or kernels.data.ndim != 3:
        raise ShapeError(f"conv1d: input shape {x.shape}, kernel shape {kernels.shape}")
    kd = kernels.data
    n, c, length = xd.shape
    c_out, c_k, k = kd.shape
    if c != c_k:
        raise ShapeError(f"conv1d: input has {c} channels, kernels expect {c_k}")
    if k > length:
        raise ShapeError(f"conv1d: kernel length {k} exceeds input length {length}")
    w = (length - k) // stride + 1

    xc = np.ascontiguousarray(xd)
    sn, sc, sl = xc.strides
    windows = as_strided(xc, shape=(n, w, c, k), strides=(sn, sl * stride, sc, sl))
    cols = windows.reshape(n * w, c * k)  # forced copy: one unfold per op
    kmat = kd.reshape(c_out, c * k)
    out_data = (cols @ kmat.T).reshape(n, w, c_out)
    out_data = np.ascontiguousarray(out_data.transpose(0, 2, 1))
    if squeeze:
        out_data = out_data[0]
    out = Tensor(out_data, requires_grad=x.requires_grad or kernels.requires_grad)

    def backward(g):
        gb = (g[None] if squeeze else g).transpose(0, 2, 1).reshape(n * w, c_out)
        gk = None
        if kernels.requires_grad:
            gk = (gb.T @ cols).reshape(c_out, c, k)
        gx = None
        if x.requires_grad:
            gcols = (gb @ kmat).reshape(n, w, c, k)
            gx = np.zeros_like(xc)
            for kk in range(k):
                gx[:, :, kk : kk + stride * w : stride] += gcols[:, :, :, kk].transpose(0, 2, 1)
            if squeeze:
                gx = gx[0]
        return gx, gk

    record(out, (x, kernels), backward)
    return out


def max_pool1d(x, window: int) -> Tensor:
    """Non-overlapping max pooling along the last axis; remainder dropped.

    Backward routes the gradient to the first maximal index of each window.
    """
    x = as_tensor(x)
    if not isinstance(window, int) or window <= 0:
        raise ParameterError(f"pool window must be a positive integer, got {window}")
    xd = x.data
    length = xd.shape[-1]
    if window > length:
        raise ShapeError(f"pool window {window} exceeds input length {length}")
    w = length // window
    trimmed = np.ascontiguousarray(xd[..., : w * window]).reshape(xd.shape[:-1] + (w, window))
    idx = trimmed.argmax(axis=-1)  # first index on ties
    out_data = np.take_along_axis(trimmed, idx[..., None], axis=-1)[..., 0]
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward(g):
        buf = np.zeros_like(trimmed)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(xd)
        gx[..., : w * window] = buf.reshape(xd.shape[:-1] + (w * window,))
        return (gx,)

    record(out, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)
    record(out, (x,), lambda g: (g.reshape(x.data.shape),))
    return out


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(x.data, axes), requires_grad=x.requires_grad)
    record(out, (x,), lambda g: (np.transpose(g, inverse),))
    return out


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along ``axis``."""
    x = as_tensor(x)
    dim = x.data.shape[axis]
    if start < 0 or length < 1 or start + length > dim:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for axis {axis} of {x.shape}")
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(x.data[sl], requires_grad=x.requires_grad)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    record(out, (x,), backward)
    return out


def split(x, sizes: Sequence[int], axis: int) -> tuple[Tensor, ...]:
    """Split along ``axis`` into consecutive blocks of the given sizes.

    All outputs share one tape record whose backward concatenates the
    upstream gradients, instead of scattering each block into a full-size
    buffer.
    """
    x = as_tensor(x)
    sizes = tuple(int(s) for s in sizes)
    if sum(sizes) != x.data.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover axis {axis} of {x.shape}")
    bounds = np.cumsum(sizes)[:-1]
    pieces = np.split(x.data, bounds, axis=axis)
    outs = tuple(Tensor(np.ascontiguousarray(p), requires_grad=x.requires_grad) for p in pieces)

    def backward(gs):
        filled = [
            g if g is not None else np.zeros_like(out.data) for g, out in zip(gs, outs)
        ]
        return (np.concatenate(filled, axis=axis),)

    record_multi(outs, (x,), backward)
    return outs


def unstack(x, axis: int) -> tuple[Tensor, ...]:
    """Separate tensors along ``axis`` (inverse of :func:`stack`).

    All outputs share one tape record whose backward re-stacks the
    upstream gradients in a single allocation.
    """
    x = as_tensor(x)
    moved = np.moveaxis(x.data, axis, 0)
    outs = tuple(
        Tensor(np.ascontiguousarray(moved[i]), requires_grad=x.requires_grad)
        for i in range(moved.shape[0])
    )

    def backward(gs):
        filled = [
            g if g is not None else np.zeros_like(out.data) for g, out in zip(gs, outs)
        ]
        return (np.stack(filled, axis=axis),)

    record_multi(outs, (x,), backward)
    return outs


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
    )
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    record(out, tuple(tensors), backward)
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of an empty sequence")
    out = Tensor(
        np.stack([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
    )

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(tensors)))

    record(out, tuple(tensors), backward)
    return out


def flip(x, axis: int) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.flip(x.data, axis=axis).copy(), requires_grad=x.requires_grad)
    record(out, (x,), lambda g: (np.flip(g, axis=axis),))
    return out


# ---------------------------------------------------------------------------
# reductions


def _restore_axes(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), requires_grad=x.requires_grad)

    def backward(g):
        return (_restore_axes(g, x.data.shape, axis, keepdims).copy(),)

    record(out, (x,), backward)
    return out


def tensor_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out_data.size, 1)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward(g):
        return (_restore_axes(g, x.data.shape, axis, keepdims) / count,)

    record(out, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# optimizer and schedule


class Sgd:
    """Plain gradient descent: p <- p - lr * grad(p), grads cleared after."""

    def __init__(self, parameters: dict[str, Tensor], learning_rate: float):
        if learning_rate <= 0:
            raise ParameterError(f"learning rate must be positive, got {learning_rate}")
        self.parameters = dict(parameters)
        self.learning_rate = float(learning_rate)

    def step(self) -> None:
        for name, p in self.parameters.items():
            if p.grad is None:
                raise StateError(f"parameter '{name}' has no gradient")
        for p in self.parameters.values():
            p.data -= np.asarray(self.learning_rate * p.grad, dtype=p.data.dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters.values():
            p.grad = None


class CyclicalLr:
    """Triangular cyclical learning rate, periodic in epochs.

    Rises linearly lr_min -> lr_max over the first half cycle, falls back
    over the second half.  May be evaluated at fractional epochs to get
    per-batch resolution.
    """

    def __init__(self, lr_min: float = 1e-4, lr_max: float = 1e-2, cycle_length_epochs: int = 21):
        if lr_min <= 0 or lr_max < lr_min:
            raise ParameterError(f"need 0 < lr_min <= lr_max, got {lr_min}, {lr_max}")
        if cycle_length_epochs <= 0:
            raise ParameterError("cycle length must be a positive integer")
        self.lr_min = float(lr_min)
        self.lr_max = float(lr_max)
        self.cycle_length_epochs = int(cycle_length_epochs)

    def __call__(self, epoch: float) -> float:
        if epoch < 0:
            raise ParameterError(f"epoch must be non-negative, got {epoch}")
        pos = math.fmod(epoch, self.cycle_length_epochs) / self.cycle_length_epochs
        tri = 2.0 * pos if pos <= 0.5 else 2.0 * (1.0 - pos)
        return self.lr_min + (self.lr_max - self.lr_min) * tri


# ---------------------------------------------------------------------------
# verification harness


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: Optional[float] = None,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic map from one tensor to a scalar tensor.
    Relative error uses floor 1e-8:  |a - cd| / max(|a|, |cd|, 1e-8).
    ``max_coords`` limits the number of probed coordinates (seeded choice)
    for large inputs; by default every coordinate is probed.
    """
    if h is None:
        h = 1e-5 if x.data.dtype == np.float64 else 1e-3
    if h <= 0:
        raise ParameterError(f"step must be positive, got {h}")

    probe = Tensor(x.data.copy(), requires_grad=True, dtype=x.data.dtype)
    with Tape() as tape:
        y = f(probe)
        if y.data.size != 1:
            raise ShapeError(f"finite_difference_check needs a scalar function, got {y.shape}")
        tape.backward(y)
    analytic = probe.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        gen = rng if rng is not None else np.random.default_rng(0)
        coords = gen.choice(flat.size, size=max_coords, replace=False)

    def eval_at(values: np.ndarray) -> float:
        out = f(Tensor(values.reshape(x.data.shape), dtype=x.data.dtype))
        return float(out.data.reshape(()))

    worst = 0.0
    for i in coords:
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up = eval_at(bumped)
        bumped[i] = flat[i] - h
        down = eval_at(bumped)
        cd = (up - down) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(cd), 1e-8)
        worst = max(worst, abs(analytic[i] - cd) / denom)
    return worst
