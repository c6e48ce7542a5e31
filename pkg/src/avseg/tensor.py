"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every array in the project flows through this module.  Tensors wrap numpy
buffers; each differentiable operation appends a record to the active tape,
and ``backward`` replays those records in reverse to populate ``grad`` on
every reachable tensor with ``requires_grad``.

Broadcasting is numpy's trailing-aligned rule (dims equal or 1); anything
else raises ``DimensionError``.  All operations verify their outputs are
finite: NaN/Inf is an error state, never a silent value.
"""

from __future__ import annotations

import contextlib
from functools import lru_cache

import numpy as np


class DimensionError(ValueError):
    """Shapes incompatible for the requested operation."""


class ParameterError(ValueError):
    """A scalar argument is outside its legal range."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class Tape:
    """Ordered record of executed operations, replayed in reverse by backward."""

    def __init__(self):
        self.records = []  # list of (out, inputs, vjp_fn)

    def record(self, out, inputs, vjp):
        self.records.append((out, inputs, vjp))

    def clear(self):
        self.records.clear()

    def __len__(self):
        return len(self.records)


_TAPE_STACK: list[Tape | None] = [Tape()]


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / oracle passes)."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


@contextlib.contextmanager
def fresh_tape():
    """Run with a private tape; used by gradient checking."""
    tape = Tape()
    _TAPE_STACK.append(tape)
    try:
        yield tape
    finally:
        _TAPE_STACK.pop()


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs, vjp):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(sa: tuple, sb: tuple, op: str):
    for a, b in zip(reversed(sa), reversed(sb)):
        if a != b and a != 1 and b != 1:
            raise DimensionError(f"{op}: cannot broadcast {sa} with {sb}")


def backward(loss: Tensor):
    """Populate grads of every reachable requires_grad tensor; clears the tape."""
    tape = active_tape()
    if tape is None:
        raise ContractError("backward called with recording disabled")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, vjp in reversed(tape.records):
        if out.grad is None:
            continue
        vjp(out.grad)
    tape.clear()


# -- elementwise / broadcast ops -------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    out = Tensor(a.data + b.data)
    _check_finite(out.data, "add")

    def vjp(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    _record(out, (a, b), vjp)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = Tensor(a.data * b.data)
    _check_finite(out.data, "mul")

    def vjp(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    _record(out, (a, b), vjp)
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "div")
    out = Tensor(a.data / b.data)
    _check_finite(out.data, "div")

    def vjp(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    _record(out, (a, b), vjp)
    return out


def texp(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.exp(x.data))
    _check_finite(out.data, "exp")

    def vjp(g):
        _accumulate(x, g * out.data)

    _record(out, (x,), vjp)
    return out


def tlog(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))
    _check_finite(out.data, "log")

    def vjp(g):
        _accumulate(x, g / x.data)

    _record(out, (x,), vjp)
    return out


def tsqrt(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sqrt(x.data))
    _check_finite(out.data, "sqrt")

    def vjp(g):
        _accumulate(x, g / (2.0 * out.data))

    _record(out, (x,), vjp)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # stable two-branch form
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.clip(d, 0, None))),
                 np.exp(np.clip(d, None, 0)) / (1.0 + np.exp(np.clip(d, None, 0))))
    out = Tensor(y)

    def vjp(g):
        _accumulate(x, g * y * (1.0 - y))

    _record(out, (x,), vjp)
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))

    def vjp(g):
        _accumulate(x, g * (x.data > 0))

    _record(out, (x,), vjp)
    return out


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(x, np.broadcast_to(gg, x.shape).copy())

    _record(out, (x,), vjp)
    return out


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def global_avg_pool(x) -> Tensor:
    """Spatial mean over the last two axes: (..., C, H, W) -> (..., C)."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"global_avg_pool needs at least 3 dims, got {x.shape}")
    return tmean(x, axis=(-2, -1))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul requires 2+ dims, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    _check_finite(out.data, "matmul")

    def vjp(g):
        _accumulate(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape))
        _accumulate(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))

    _record(out, (a, b), vjp)
    return out


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - dot))

    _record(out, (x,), vjp)
    return out


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = Tensor(ls)

    def vjp(g):
        _accumulate(x, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    _record(out, (x,), vjp)
    return out


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on raw logits; targets are constants."""
    x = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    d = x.data
    out = Tensor(np.maximum(d, 0.0) - d * t + np.log1p(np.exp(-np.abs(d))))

    def vjp(g):
        s = 1.0 / (1.0 + np.exp(-d))
        _accumulate(x, g * (s - t))

    _record(out, (x,), vjp)
    return out


def reshape(x, *shape) -> Tensor:
    x = as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = Tensor(x.data.reshape(shape))

    def vjp(g):
        _accumulate(x, g.reshape(x.shape))

    _record(out, (x,), vjp)
    return out


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.transpose(axes))
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        _accumulate(x, g.transpose(inv))

    _record(out, (x,), vjp)
    return out


def take(x, idx) -> Tensor:
    """Numpy basic/advanced indexing with scatter-add backward."""
    x = as_tensor(x)
    out = Tensor(x.data[idx])

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accumulate(x, gx)

    _record(out, (x,), vjp)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    _record(out, tuple(tensors), vjp)
    return out


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    _check_broadcast(x.shape, tuple(shape), "broadcast_to")
    out = Tensor(np.broadcast_to(x.data, shape).copy())

    def vjp(g):
        _accumulate(x, _unbroadcast(g, x.shape))

    _record(out, (x,), vjp)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gain.data * xhat + bias.data)
    n = x.shape[-1]

    def vjp(g):
        _accumulate(gain, _unbroadcast(g * xhat, gain.shape))
        _accumulate(bias, _unbroadcast(g, bias.shape))
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        _accumulate(x, gx)

    _record(out, (x, gain, bias), vjp)
    return out


# -- spatial ops -------------------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """Cross-correlation of (B,Cin,H,W) with (Cout,Cin,kh,kw), zero padding
    (k-1)//2 so the output is H/stride x W/stride for divisible inputs."""
    x, w = as_tensor(x), as_tensor(w)
    if stride < 1:
        raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input/kernel, got {x.shape}, {w.shape}")
    cout, cin, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError(f"conv2d kernel must be odd, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise DimensionError(f"conv2d channels disagree: input {x.shape} kernel {w.shape}")
    bsz, _, h, wid = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]          # (B,Cin,Ho,Wo,kh,kw)
    ho, wo = win.shape[2], win.shape[3]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, -1)
    y = col @ wmat.T
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
    out = Tensor(y.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2))
    _check_finite(out.data, "conv2d")

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(bsz * ho * wo, cout)
        if w.requires_grad:
            _accumulate(w, (g2.T @ col).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accumulate(b, g2.sum(axis=0))
        if x.requires_grad:
            gcol = (g2 @ wmat).reshape(bsz, ho, wo, cin, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        gcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _accumulate(x, gxp[:, :, ph:ph + h, pw:pw + wid])

    inputs = (x, w) if b is None else (x, w, b)
    _record(out, inputs, vjp)
    return out


def upsample_nearest2(x) -> Tensor:
    """Double the last two axes by pixel repetition."""
    x = as_tensor(x)
    out = Tensor(x.data.repeat(2, axis=-2).repeat(2, axis=-1))

    def vjp(g):
        s = g.shape
        gg = g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1))
        _accumulate(x, gg)

    _record(out, (x,), vjp)
    return out


@lru_cache(maxsize=None)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation weights (n_out, n_in), align_corners=False convention."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        i0 = int(np.floor(src))
        frac = src - i0
        i0c = min(max(i0, 0), n_in - 1)
        i1c = min(max(i0 + 1, 0), n_in - 1)
        m[o, i0c] += 1.0 - frac
        m[o, i1c] += frac
    return m


def upsample_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes (align_corners=False)."""
    x = as_tensor(x)
    mr = _bilinear_matrix(x.shape[-2], out_h)
    mc = _bilinear_matrix(x.shape[-1], out_w)
    out = Tensor(np.matmul(mr, np.matmul(x.data, mc.T)))

    def vjp(g):
        _accumulate(x, np.matmul(mr.T, np.matmul(g, mc)))

    _record(out, (x,), vjp)
    return out


# -- composed helpers ---------------------------------------------------------


def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """<a,b> / ((|a|+eps) * (|b|+eps)); returns 0 when both inputs are zero."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity shapes disagree: {a.shape} vs {b.shape}")
    num = tsum(mul(a, b))
    na = tsqrt(tsum(mul(a, a)))
    nb = tsqrt(tsum(mul(b, b)))
    return div(num, mul(add(na, eps), add(nb, eps)))
