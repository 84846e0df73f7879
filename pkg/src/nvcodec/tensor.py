"""Dense NCHW tensor engine with reverse-mode autodiff on an explicit tape.

All array storage is numpy; differentiable operations record a closure on the
active :class:`Tape` so :func:`backward` can replay them in reverse. Inference
code simply runs without a tape and pays no graph overhead.

Precision is process-global: float32 for training speed, float64 for
gradient-check runs (see :func:`using_dtype`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special as _special


class ShapeMismatchError(ValueError):
    """Operands disagree on an axis the operation requires to match."""


class GraphError(RuntimeError):
    """Backward called on a detached or already-consumed graph."""


_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the global scalar precision (e.g. float64 for
    finite-difference checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """N-d array plus optional gradient slot.

    ``requires_grad`` marks leaves (parameters); tensors produced by taped ops
    are tracked automatically while a tape is active.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape", "_tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self._tracked = self.requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=_DEFAULT_DTYPE))


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of taped ops; one tape per training step."""

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap op output; record on the active tape if any input is tracked."""
    out = Tensor(out_data, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        out.tape = tape
        tape.records.append(_Record(out, tuple(inputs), backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tracked tensor reachable from ``loss``.

    ``loss`` must be a scalar recorded on a tape; replaying the same tape a
    second time is an error.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise GraphError("loss is not attached to a tape (detached graph or no active tape)")
    if tape.consumed:
        raise GraphError("tape already replayed; build a fresh tape per step")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for record in reversed(tape.records):
        upstream = grads.pop(id(record.out), None)
        holders.pop(id(record.out), None)
        if upstream is None:
            continue
        parts = record.backward(upstream)
        for tensor, part in zip(record.inputs, parts):
            if part is None or not tensor._tracked:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + part
            else:
                grads[key] = part
                holders[key] = tensor
    for key, accumulated in grads.items():
        tensor = holders[key]
        if tensor.requires_grad:
            if tensor.grad is None:
                tensor.grad = np.asarray(accumulated, dtype=tensor.data.dtype)
            else:
                tensor.grad = tensor.grad + accumulated


# ---------------------------------------------------------------------------
# elementwise ops


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _emit(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g * (0.5 / out),))


def square(a: Tensor) -> Tensor:
    return _emit(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def pow_const(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent
    return _emit(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = _special.expit(a.data).astype(a.data.dtype)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data).astype(a.data.dtype)
    return _emit(out, (a,), lambda g: (g * _special.expit(a.data),))


def erf(a: Tensor) -> Tensor:
    out = _special.erf(a.data).astype(a.data.dtype)
    two_over_sqrt_pi = 1.1283791670955126

    def bwd(g):
        return (g * two_over_sqrt_pi * np.exp(-a.data * a.data),)

    return _emit(out, (a,), bwd)


def erfc(a: Tensor) -> Tensor:
    """Complementary error function; keeps far-tail masses representable."""
    out = _special.erfc(a.data).astype(a.data.dtype)
    two_over_sqrt_pi = 1.1283791670955126

    def bwd(g):
        return (-g * two_over_sqrt_pi * np.exp(-a.data * a.data),)

    return _emit(out, (a,), bwd)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select by a boolean array; the mask is not differentiated."""
    out = np.where(mask, a.data, b.data)

    def bwd(g):
        return (
            _unbroadcast(g * mask, a.shape),
            _unbroadcast(g * ~mask, b.shape),
        )

    return _emit(out, (a, b), bwd)


def absolute(a: Tensor) -> Tensor:
    return _emit(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    out = np.maximum(a.data, b.data)

    def bwd(g):
        pick_a = a.data >= b.data
        return (
            _unbroadcast(g * pick_a, a.shape),
            _unbroadcast(g * ~pick_a, b.shape),
        )

    return _emit(out, (a, b), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _emit(out, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _emit(np.asarray(out), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    # the reciprocal must carry the operand's precision, not the global
    # default, or float64 reductions pick up float32 rounding
    inv = Tensor(1.0 / count, dtype=a.data.dtype)
    return mul(tsum(a, axis=axis, keepdims=keepdims), inv)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(out, tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index].copy()

    def bwd(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _emit(out, (a,), bwd)


def chunk(a: Tensor, parts: int, axis: int = 1) -> list[Tensor]:
    extent = a.shape[axis]
    if extent % parts:
        raise ShapeMismatchError(f"axis {axis} extent {extent} not divisible into {parts} chunks")
    step = extent // parts
    return [narrow(a, axis, i * step, step) for i in range(parts)]


# ---------------------------------------------------------------------------
# spatial ops (NCHW)


def _check_4d(t: Tensor, role: str) -> None:
    if t.ndim != 4:
        raise ShapeMismatchError(f"{role} must be 4-D (N,C,H,W), got shape {t.shape}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh * ow, c * kh * kw)
    return cols, oh, ow


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int, oh: int, ow: int):
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        i_hi = i + stride * oh
        for j in range(kw):
            out[:, :, i:i_hi:stride, j:j + stride * ow:stride] += cols6[:, :, :, :, i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding; weight is (out_ch, in_ch, kH, kW)."""
    _check_4d(x, "conv2d input")
    if weight.ndim != 4:
        raise ShapeMismatchError(f"conv2d weight must be 4-D, got shape {weight.shape}")
    out_ch, in_ch, kh, kw = weight.shape
    if x.shape[1] != in_ch:
        raise ShapeMismatchError(
            f"conv2d channel axis mismatch: input has {x.shape[1]} channels, weight expects {in_ch}"
        )
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ShapeMismatchError(
            f"conv2d spatial extent {x.shape[2:]} too small for kernel {kh}x{kw} with pad {pad}"
        )
    n = x.shape[0]
    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(out_ch, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data.reshape(1, 1, out_ch)
    out = out.transpose(0, 2, 1).reshape(n, out_ch, oh, ow)

    def bwd(g):
        gmat = g.reshape(n, out_ch, oh * ow).transpose(0, 2, 1)
        grad_w = np.einsum("npk,npc->kc", gmat, cols, optimize=True).reshape(weight.shape)
        grad_b = None if bias is None else g.sum(axis=(0, 2, 3))
        grad_cols = gmat @ wmat
        grad_x = _col2im(grad_cols, x.shape, kh, kw, stride, pad, oh, ow)
        return (grad_x, grad_w, grad_b)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return _emit(out, inputs, lambda g: bwd(g)[:2])
    return _emit(out, inputs, bwd)


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; weight is (in_ch, out_ch, kH, kW)."""
    _check_4d(x, "conv2d_transpose input")
    if weight.ndim != 4:
        raise ShapeMismatchError(f"conv2d_transpose weight must be 4-D, got shape {weight.shape}")
    in_ch, out_ch, kh, kw = weight.shape
    if x.shape[1] != in_ch:
        raise ShapeMismatchError(
            f"conv2d_transpose channel axis mismatch: input has {x.shape[1]} channels, weight expects {in_ch}"
        )
    n, _, h, w = x.shape
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (w - 1) * stride - 2 * pad + kw
    if oh <= 0 or ow <= 0:
        raise ShapeMismatchError(f"conv2d_transpose output extent ({oh},{ow}) must be positive")
    wmat = weight.data.reshape(in_ch, out_ch * kh * kw)
    xmat = x.data.reshape(n, in_ch, h * w).transpose(0, 2, 1)
    cols = xmat @ wmat
    out = _col2im(cols, (n, out_ch, oh, ow), kh, kw, stride, pad, h, w)
    if bias is not None:
        out += bias.data.reshape(1, out_ch, 1, 1)

    def bwd(g):
        gcols, _, _ = _im2col(g, kh, kw, stride, pad)
        grad_x = (gcols @ wmat.T).transpose(0, 2, 1).reshape(x.shape)
        grad_w = np.einsum("npc,npk->ck", xmat, gcols, optimize=True).reshape(weight.shape)
        grad_b = None if bias is None else g.sum(axis=(0, 2, 3))
        return (grad_x, grad_w, grad_b)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return _emit(out, inputs, lambda g: bwd(g)[:2])
    return _emit(out, inputs, bwd)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k-by-k mean pooling; trailing rows/cols beyond a full
    window are dropped."""
    _check_4d(x, "avg_pool2d input")
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    trimmed = x.data[:, :, : oh * k, : ow * k]
    out = trimmed.reshape(n, c, oh, k, ow, k).mean(axis=(3, 5))

    def bwd(g):
        grad = np.zeros(x.shape, dtype=g.dtype)
        spread = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        grad[:, :, : oh * k, : ow * k] = spread
        return (grad,)

    return _emit(out, (x,), bwd)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    _check_4d(x, "upsample_nearest input")
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bwd(g):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _emit(out, (x,), bwd)


def pad2d(x: Tensor, p: int, mode: str = "reflect") -> Tensor:
    """Spatial padding with gradient scatter back through the index map."""
    _check_4d(x, "pad2d input")
    if mode not in ("reflect", "replicate"):
        raise ValueError(f"unsupported pad mode {mode!r}")
    np_mode = "reflect" if mode == "reflect" else "edge"
    n, c, h, w = x.shape
    out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode=np_mode)
    idx = np.pad(np.arange(h * w).reshape(h, w), p, mode=np_mode).ravel()

    def bwd(g):
        flat = np.zeros((n, c, h * w), dtype=g.dtype)
        np.add.at(flat, (slice(None), slice(None), idx), g.reshape(n, c, -1))
        return (flat.reshape(x.shape),)

    return _emit(out, (x,), bwd)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with one slope per channel."""
    _check_4d(x, "prelu input")
    if slope.ndim != 1 or slope.shape[0] != x.shape[1]:
        raise ShapeMismatchError(
            f"prelu slope must have one entry per channel ({x.shape[1]}), got shape {slope.shape}"
        )
    s = slope.data.reshape(1, -1, 1, 1)
    positive = x.data >= 0
    out = np.where(positive, x.data, s * x.data)

    def bwd(g):
        grad_x = g * np.where(positive, 1.0, s).astype(g.dtype)
        grad_s = (g * np.where(positive, 0.0, x.data)).sum(axis=(0, 2, 3))
        return (grad_x, grad_s)

    return _emit(out, (x, slope), bwd)


def bilinear_warp(image: Tensor, flow: Tensor) -> Tensor:
    """Sample ``image`` at per-pixel displaced positions.

    ``flow`` is (N,2,H,W) holding (dx, dy) in pixels; samples are clamped to
    the frame border (replication), giving zero gradient to clipped flow.
    """
    _check_4d(image, "warp image")
    _check_4d(flow, "warp flow")
    if flow.shape[1] != 2:
        raise ShapeMismatchError(f"flow must carry (dx,dy) channels, got {flow.shape[1]}")
    if image.shape[0] != flow.shape[0] or image.shape[2:] != flow.shape[2:]:
        raise ShapeMismatchError(
            f"warp spatial extents differ: image {image.shape} vs flow {flow.shape}"
        )
    n, c, h, w = image.shape
    dtype = image.data.dtype
    ys, xs = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij")
    gx = xs[None] + flow.data[:, 0]
    gy = ys[None] + flow.data[:, 1]
    inside_x = (gx >= 0.0) & (gx <= w - 1.0)
    inside_y = (gy >= 0.0) & (gy <= h - 1.0)
    gx = np.clip(gx, 0.0, w - 1.0)
    gy = np.clip(gy, 0.0, h - 1.0)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (gx - x0).astype(dtype)
    wy = (gy - y0).astype(dtype)

    batch = np.arange(n)[:, None, None]
    i00 = image.data[batch, :, y0, x0].transpose(0, 3, 1, 2)
    i01 = image.data[batch, :, y0, x1].transpose(0, 3, 1, 2)
    i10 = image.data[batch, :, y1, x0].transpose(0, 3, 1, 2)
    i11 = image.data[batch, :, y1, x1].transpose(0, 3, 1, 2)
    wxb, wyb = wx[:, None], wy[:, None]
    top = i00 * (1.0 - wxb) + i01 * wxb
    bottom = i10 * (1.0 - wxb) + i11 * wxb
    out = top * (1.0 - wyb) + bottom * wyb

    def bwd(g):
        w00 = (1.0 - wxb) * (1.0 - wyb)
        w01 = wxb * (1.0 - wyb)
        w10 = (1.0 - wxb) * wyb
        w11 = wxb * wyb
        grad_img = np.zeros_like(image.data)
        flat = grad_img.reshape(n, c, h * w)
        for weight_map, yy, xx in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
            lin = (yy * w + xx).reshape(n, 1, -1)
            np.add.at(flat, (batch.reshape(n, 1, 1), np.arange(c)[None, :, None], lin), (g * weight_map).reshape(n, c, -1))
        d_dx = (i01 - i00) * (1.0 - wyb) + (i11 - i10) * wyb
        d_dy = bottom - top
        grad_flow = np.stack(
            [
                (g * d_dx).sum(axis=1) * inside_x,
                (g * d_dy).sum(axis=1) * inside_y,
            ],
            axis=1,
        )
        return (grad_img, grad_flow)

    return _emit(out, (image, flow), bwd)


def quantize_noise(x: Tensor, rng: np.random.Generator) -> Tensor:
    """Additive U[-1/2, 1/2) noise; gradient passes through unchanged."""
    noise = rng.uniform(-0.5, 0.5, size=x.shape).astype(x.data.dtype)
    return _emit(x.data + noise, (x,), lambda g: (g,))


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (symmetric residual convention)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
