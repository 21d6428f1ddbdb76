"""Reverse-mode automatic differentiation over dense numpy arrays.

Everything is 64-bit: real tensors are float64, complex tensors are
complex128.  A ``Tape`` records each differentiable operation whose
inputs require gradients; ``Tape.backward`` replays the records in
reverse creation order and accumulates gradients by addition across
fan-out.  Losses must be real scalars.

Complex gradients use the Wirtinger-pair convention grad = dL/dRe +
i*dL/dIm, under which the backward rule of a holomorphic linear map is
its conjugate adjoint.  Gradients flowing into a real tensor are
projected onto the real axis at accumulation time, so mixed
real/complex graphs (FFT pipelines on real fields) need no special
casing in the individual rules.

Finiteness is validated where data enters the system (the ``tensor``
constructor); interior operations trust their inputs.  One tape serves
one training step on one thread and is consumed by ``backward``.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import erf

REAL = np.float64
COMPLEX = np.complex128

_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape():
    """Innermost tape currently recording on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense row-major float64/complex128 array, optionally tracked on a tape."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind in "iub":
            arr = arr.astype(REAL)
        elif arr.dtype == np.float32:
            arr = arr.astype(REAL)
        elif arr.dtype == np.complex64:
            arr = arr.astype(COMPLEX)
        if arr.dtype not in (REAL, COMPLEX):
            raise TypeError(f"unsupported dtype {arr.dtype}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data contains NaN or Inf")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.reshape(()).item()

    def copy(self) -> "Tensor":
        return _wrap(self.data.copy())

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"


def _wrap(arr: np.ndarray) -> Tensor:
    # internal constructor: skips validation, used for op outputs
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    return t


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


class Tape:
    """Append-only record of operations; consumed by one backward sweep."""

    def __init__(self):
        self._records = []          # (out, inputs, rule)
        self._out_ids = set()
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")
        return False

    def _record(self, out: Tensor, inputs, rule):
        out.requires_grad = True
        self._records.append((out, inputs, rule))
        self._out_ids.add(id(out))

    def backward(self, loss: Tensor) -> dict:
        """Reverse sweep from a real scalar loss.

        Returns a dict mapping each reachable leaf Tensor (requires_grad
        and not produced by a recorded op) to its gradient array.  The
        tape is cleared afterwards and cannot be reused.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed by backward")
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ValueError("loss must be a scalar tensor")
        if loss.dtype != REAL:
            raise ValueError("loss must be real valued")
        if id(loss) not in self._out_ids:
            raise ValueError("loss was not recorded on this tape")

        acc = {id(loss): np.ones(loss.shape, dtype=REAL)}
        holders = {}
        for out, inputs, rule in reversed(self._records):
            g = acc.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, rule(g)):
                if gi is None or not t.requires_grad:
                    continue
                if not np.iscomplexobj(t.data) and np.iscomplexobj(gi):
                    gi = gi.real
                key = id(t)
                prev = acc.get(key)
                acc[key] = gi if prev is None else prev + gi
                holders[key] = t

        grads = {}
        for key, g in acc.items():
            t = holders.get(key)
            if t is None or id(t) in self._out_ids:
                continue
            grads[t] = np.ascontiguousarray(g)
        self._records.clear()
        self._out_ids.clear()
        self._consumed = True
        return grads


def _maybe_record(out: Tensor, inputs, rule) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape._record(out, inputs, rule)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data + b.data)
    return _maybe_record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data - b.data)
    return _maybe_record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _wrap(a.data * b.data)
    return _maybe_record(
        out, (a, b),
        lambda g: (_unbroadcast(g * np.conj(b.data), a.shape),
                   _unbroadcast(g * np.conj(a.data), b.shape)))


def scale(a: Tensor, c) -> Tensor:
    """Multiply by a python scalar (not recorded as an input)."""
    out = _wrap(a.data * c)
    cc = np.conj(c)
    return _maybe_record(out, (a,), lambda g: (g * cc,))


def neg(a: Tensor) -> Tensor:
    out = _wrap(-a.data)
    return _maybe_record(out, (a,), lambda g: (-g,))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit x * Phi(x); real input only."""
    if np.iscomplexobj(a.data):
        raise TypeError("gelu expects a real tensor")
    x = a.data
    phi_cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = _wrap(x * phi_cdf)

    def rule(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi_cdf + x * pdf),)

    return _maybe_record(out, (a,), rule)


# ---------------------------------------------------------------------------
# channel mixing


def channel_map(v: Tensor, W: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise linear map over the channel axis.

    v: [batch, c_in, spatial...], W: [c_out, c_in], bias: [c_out] or None.
    Applied independently at every spatial location.
    """
    if v.ndim < 2 or W.ndim != 2 or W.shape[1] != v.shape[1]:
        raise ValueError(
            f"channel mismatch: v {v.shape}, W {W.shape}")
    # flatten spatial axes so the contraction runs as one GEMM
    vshape = v.shape
    v2 = v.data.reshape(vshape[0], vshape[1], -1)
    y = np.matmul(W.data, v2).reshape((vshape[0], W.shape[0]) + vshape[2:])
    if bias is not None:
        y = y + bias.data.reshape((1, -1) + (1,) * (v.ndim - 2))
    out = _wrap(y)

    def rule(g):
        g2 = g.reshape(g.shape[0], g.shape[1], -1)
        gv = np.matmul(np.conj(W.data).T, g2).reshape(vshape)
        gW = np.tensordot(g2, np.conj(v2), axes=([0, 2], [0, 2]))
        if bias is None:
            return gv, gW
        gb = g.sum(axis=(0,) + tuple(range(2, g.ndim)))
        return gv, gW, gb

    inputs = (v, W) if bias is None else (v, W, bias)
    return _maybe_record(out, inputs, rule)


def mode_mix(v: Tensor, R: Tensor) -> Tensor:
    """Per-mode channel mixing: v [batch, c_in, slots], R [slots, c_out, c_in]."""
    if v.ndim != 3 or R.ndim != 3 or R.shape[2] != v.shape[1] or R.shape[0] != v.shape[2]:
        raise ValueError(f"mode mismatch: v {v.shape}, R {R.shape}")
    # batched GEMM over the slot axis: (s,o,i) @ (s,i,b) -> (s,o,b)
    out = _wrap(np.matmul(R.data, v.data.transpose(2, 1, 0)).transpose(2, 1, 0))

    def rule(g):
        gt = g.transpose(2, 1, 0)
        gv = np.matmul(np.conj(R.data).transpose(0, 2, 1), gt).transpose(2, 1, 0)
        gR = np.matmul(gt, np.conj(v.data).transpose(2, 0, 1))
        return gv, gR

    return _maybe_record(out, (v, R), rule)


# ---------------------------------------------------------------------------
# Fourier transforms (unnormalized forward, 1/N inverse)


def _norm_axes(axes, ndim):
    axes = tuple(a % ndim for a in axes)
    if len(set(axes)) != len(axes):
        raise ValueError("repeated transform axis")
    return axes


def fft(x: Tensor, axes=(-1,)) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    for a in axes:
        if x.shape[a] == 0:
            raise ValueError("zero-length transform axis")
    out = _wrap(np.fft.fftn(x.data, axes=axes))
    n = float(np.prod([x.shape[a] for a in axes]))
    # adjoint of the unnormalized DFT is N times the inverse transform
    return _maybe_record(out, (x,), lambda g: (np.fft.ifftn(g, axes=axes) * n,))


def ifft(x: Tensor, axes=(-1,)) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    for a in axes:
        if x.shape[a] == 0:
            raise ValueError("zero-length transform axis")
    out = _wrap(np.fft.ifftn(x.data, axes=axes))
    n = float(np.prod([x.shape[a] for a in axes]))
    return _maybe_record(out, (x,), lambda g: (np.fft.fftn(g, axes=axes) / n,))


def real(x: Tensor) -> Tensor:
    out = _wrap(np.ascontiguousarray(x.data.real))
    return _maybe_record(out, (x,), lambda g: (g,))


def imag(x: Tensor) -> Tensor:
    out = _wrap(np.ascontiguousarray(x.data.imag))
    return _maybe_record(out, (x,), lambda g: (1j * g,))


def conj(x: Tensor) -> Tensor:
    out = _wrap(np.conj(x.data))
    return _maybe_record(out, (x,), lambda g: (np.conj(g),))


def freq_mirror(x: Tensor, axes) -> Tensor:
    """Index map k -> (-k) mod N on the given axes (self-adjoint permutation)."""
    axes = _norm_axes(axes, x.ndim)

    def mirror(arr):
        for a in axes:
            arr = np.roll(np.flip(arr, axis=a), 1, axis=a)
        return arr

    out = _wrap(mirror(x.data))
    return _maybe_record(out, (x,), lambda g: (mirror(g),))


# ---------------------------------------------------------------------------
# shape and indexing


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    out = _wrap(np.roll(x.data, shift, axis=axis))
    return _maybe_record(out, (x,), lambda g: (np.roll(g, -shift, axis=axis),))


def shift_zero(x: Tensor, shift: int, axis: int) -> Tensor:
    """Shift along an axis filling vacated entries with zero.

    out[i] = x[i - shift] where defined; the adjoint is the opposite shift.
    """

    def do(arr, s):
        out = np.zeros_like(arr)
        if s == 0:
            out[...] = arr
            return out
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        if s > 0:
            dst[axis] = slice(s, None)
            src[axis] = slice(None, -s)
        else:
            dst[axis] = slice(None, s)
            src[axis] = slice(-s, None)
        out[tuple(dst)] = arr[tuple(src)]
        return out

    n = x.shape[axis]
    if abs(shift) >= n:
        out = _wrap(np.zeros_like(x.data))
        return _maybe_record(out, (x,), lambda g: (np.zeros_like(g),))
    out = _wrap(do(x.data, shift))
    return _maybe_record(out, (x,), lambda g: (do(g, -shift),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _wrap(np.ascontiguousarray(x.data.reshape(shape)))
    orig = x.shape
    return _maybe_record(out, (x,), lambda g: (g.reshape(orig),))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    out = _wrap(np.stack([t.data for t in tensors], axis=axis))

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _maybe_record(out, tensors, rule)


def take(x: Tensor, key) -> Tensor:
    """Gather by a tuple of slices / open-mesh index arrays.

    Every element may be selected at most once (true for slices and
    np.ix_ products), so the adjoint is a plain scatter.
    """
    out = _wrap(np.ascontiguousarray(x.data[key]))
    shape, dtype = x.shape, x.dtype

    def rule(g):
        z = np.zeros(shape, dtype=g.dtype if np.iscomplexobj(g) else dtype)
        z[key] = g
        return (z,)

    return _maybe_record(out, (x,), rule)


def embed(x: Tensor, shape, key) -> Tensor:
    """Scatter x into a zero tensor of the given shape at key (adjoint of take)."""
    z = np.zeros(tuple(shape), dtype=x.dtype)
    z[key] = x.data
    out = _wrap(z)
    return _maybe_record(out, (x,), lambda g: (np.ascontiguousarray(g[key]),))


def tsum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    out = _wrap(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)))
    shape = x.shape

    def rule(g):
        if axes is None:
            return (np.broadcast_to(g, shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(g2, shape).copy(),)

    return _maybe_record(out, (x,), rule)


def tmean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is None:
        count = x.size
    else:
        ax = axes if isinstance(axes, tuple) else (axes,)
        count = int(np.prod([x.shape[a] for a in ax]))
    return scale(tsum(x, axes=axes, keepdims=keepdims), 1.0 / count)
