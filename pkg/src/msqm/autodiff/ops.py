"""Differentiable primitives.

Every primitive is a :class:`Function` subclass paired with a lowercase
functional wrapper. Broadcasting is deliberately limited to adding a bias
vector over the last axis; every other binary op requires equal shapes.
Reductions accumulate in float64.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Function, Tensor


class DimensionError(ValueError):
    """Raised when operand extents are incompatible."""


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reduce_rows(g: np.ndarray) -> np.ndarray:
    """Sum over every axis but the last, accumulating in float64."""
    return g.reshape(-1, g.shape[-1]).sum(axis=0, dtype=np.float64).astype(g.dtype)


# --------------------------------------------------------------------------- elementwise


class Add(Function):
    name = "add"

    def forward(self, a, b):
        if a.shape != b.shape:
            raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
        return a + b

    def backward(self, g):
        return g, g


class AddBias(Function):
    name = "add_bias"

    def forward(self, x, b):
        if b.ndim != 1 or x.shape[-1] != b.shape[0]:
            raise DimensionError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
        return x + b

    def backward(self, g):
        return g, _reduce_rows(g)


class Scale(Function):
    name = "scale"

    def forward(self, x, factor: float = 1.0):
        self.factor = factor
        return x * x.dtype.type(factor)

    def backward(self, g):
        return (g * g.dtype.type(self.factor),)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        if a.shape != b.shape:
            raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return g * self.b, g * self.a


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, g):
        return (np.where(self.mask, g, 0).astype(g.dtype),)


_GELU_C = math.sqrt(2.0 / math.pi)


class GELU(Function):
    """Tanh approximation of the Gaussian error linear unit."""

    name = "gelu"

    def forward(self, x):
        self.x = x
        x2 = x * x
        self.t = np.tanh(x * (_GELU_C + _GELU_C * 0.044715 * x2))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, g):
        x, t = self.x, self.t
        du = _GELU_C + (3 * _GELU_C * 0.044715) * (x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        # tanh form never overflows
        self.y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.y

    def backward(self, g):
        return (g * self.y * (1.0 - self.y),)


# --------------------------------------------------------------------------- shape


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape=()):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, x, axes=None):
        axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(x.transpose(axes))

    def backward(self, g):
        return (np.ascontiguousarray(g.transpose(self.inverse)),)


class ConcatLast(Function):
    name = "concat_last_axis"

    def forward(self, *xs):
        lead = {x.shape[:-1] for x in xs}
        if len(lead) != 1:
            raise DimensionError(f"concat_last_axis: leading shapes differ {[x.shape for x in xs]}")
        self.splits = np.cumsum([x.shape[-1] for x in xs])[:-1]
        return np.concatenate(xs, axis=-1)

    def backward(self, g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, self.splits, axis=-1))


class TakeRows(Function):
    name = "take_rows"

    def forward(self, x, index=None):
        self.n = x.shape[0]
        self.index = index
        return x[index]

    def backward(self, g):
        gx = np.zeros((self.n,) + g.shape[1:], dtype=g.dtype)
        gx[self.index] = g
        return (gx,)


class ReplaceRows(Function):
    """``out = x`` with rows ``index`` overwritten by ``y`` (indices unique)."""

    name = "replace_rows"

    def forward(self, x, y, index=None):
        if y.shape != (len(index),) + x.shape[1:]:
            raise DimensionError(f"replace_rows: {y.shape} rows do not fit {len(index)} slots of {x.shape}")
        self.index = index
        out = x.copy()
        out[index] = y
        return out

    def backward(self, g):
        gx = g.copy()
        gx[self.index] = 0
        return gx, np.ascontiguousarray(g[self.index])


# --------------------------------------------------------------------------- linear algebra


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        return g @ np.swapaxes(self.b, -1, -2), np.swapaxes(self.a, -1, -2) @ g


# --------------------------------------------------------------------------- reductions / normalisation


class Sum(Function):
    name = "sum"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(dtype=np.float64), dtype=x.dtype)

    def backward(self, g):
        return (np.full(self.shape, g, dtype=g.dtype),)


class Mean(Function):
    name = "mean"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.mean(dtype=np.float64), dtype=x.dtype)

    def backward(self, g):
        return (np.full(self.shape, g / math.prod(self.shape), dtype=g.dtype),)


class MaxLast(Function):
    name = "max_last_axis"

    def forward(self, x):
        self.shape = x.shape
        self.arg = x.argmax(axis=-1)[..., None]
        return np.take_along_axis(x, self.arg, axis=-1)

    def backward(self, g):
        gx = np.zeros(self.shape, dtype=g.dtype)
        np.put_along_axis(gx, self.arg, g, axis=-1)
        return (gx,)


class Softmax(Function):
    name = "softmax"

    def forward(self, x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        e /= e.sum(axis=-1, keepdims=True, dtype=np.float64).astype(x.dtype)
        self.y = e
        return e

    def backward(self, g):
        y = self.y
        gy = g * y
        gy -= y * gy.sum(axis=-1, keepdims=True, dtype=np.float64).astype(g.dtype)
        return (gy,)


class LayerNorm(Function):
    name = "layer_norm"

    def forward(self, x, gain, bias, eps: float = 1e-5):
        if x.shape[-1] < 2 or gain.shape != (x.shape[-1],) or bias.shape != gain.shape:
            raise DimensionError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
        x64 = x.astype(np.float64)
        mu = x64.mean(axis=-1, keepdims=True)
        var = ((x64 - mu) ** 2).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = (x64 - mu) * self.inv
        self.gain = gain
        return (self.xhat * gain + bias).astype(x.dtype)

    def backward(self, g):
        g64 = g.astype(np.float64)
        dxhat = g64 * self.gain
        dx = self.inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g64.reshape(-1, g.shape[-1])
        dgain = (flat_g * self.xhat.reshape(flat_g.shape)).sum(axis=0)
        dbias = flat_g.sum(axis=0)
        return dx.astype(g.dtype), dgain.astype(g.dtype), dbias.astype(g.dtype)


class GroupNorm(Function):
    """Group normalisation of a ``C x T x H x W`` volume with per-channel affine."""

    name = "group_norm"

    def forward(self, x, gain, bias, groups: int = 1, eps: float = 1e-5):
        c = x.shape[0]
        if c % groups:
            raise DimensionError(f"group_norm: {c} channels not divisible into {groups} groups")
        xg = x.astype(np.float64).reshape(groups, -1)
        mu = xg.mean(axis=1, keepdims=True)
        var = ((xg - mu) ** 2).mean(axis=1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = ((xg - mu) * self.inv).reshape(x.shape)
        self.groups = groups
        self.gain = gain
        bshape = (c,) + (1,) * (x.ndim - 1)
        return (self.xhat * gain.reshape(bshape) + bias.reshape(bshape)).astype(x.dtype)

    def backward(self, g):
        c = g.shape[0]
        bshape = (c,) + (1,) * (g.ndim - 1)
        g64 = g.astype(np.float64)
        dxhat = (g64 * self.gain.reshape(bshape)).reshape(self.groups, -1)
        xhat = self.xhat.reshape(self.groups, -1)
        dx = self.inv * (
            dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dgain = (g64 * self.xhat).reshape(c, -1).sum(axis=1)
        dbias = g64.reshape(c, -1).sum(axis=1)
        return dx.reshape(g.shape).astype(g.dtype), dgain.astype(g.dtype), dbias.astype(g.dtype)


# --------------------------------------------------------------------------- spatial


def _triple(v) -> tuple[int, int, int]:
    return (v, v, v) if isinstance(v, int) else tuple(v)


class Conv3d(Function):
    """Cross-correlation of a ``C x T x H x W`` volume, lowered to one GEMM."""

    name = "conv3d"

    def forward(self, x, w, b=None, stride=1, padding=0):
        stride, padding = _triple(stride), _triple(padding)
        c, t, h, wd = x.shape
        co, ci, kt, kh, kw = w.shape
        if ci != c:
            raise DimensionError(f"conv3d: input {x.shape} has {c} channels, kernel {w.shape} expects {ci}")
        pt, ph, pw = padding
        st, sh, sw = stride
        out = tuple(
            (n + 2 * p - k) // s + 1 for n, p, k, s in zip((t, h, wd), padding, (kt, kh, kw), stride)
        )
        if min(out) < 1:
            raise DimensionError(
                f"conv3d: kernel {w.shape[2:]} with stride {stride}, padding {padding} "
                f"leaves no output for input {x.shape}"
            )
        xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw))) if any(padding) else x
        win = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
        win = win[:, : st * out[0] : st, : sh * out[1] : sh, : sw * out[2] : sw]
        cols = win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(math.prod(out), -1)
        self.cols = cols
        self.wmat = w.reshape(co, -1)
        self.meta = (x.shape, xp.shape, w.shape, stride, padding, out)
        y = cols @ self.wmat.T
        if b is not None:
            y = y + b
        return np.ascontiguousarray(y.T).reshape((co,) + out)

    def backward(self, g):
        x_shape, xp_shape, w_shape, stride, padding, out = self.meta
        co, ci, kt, kh, kw = w_shape
        gm = g.reshape(co, -1)
        dw = (gm @ self.cols).reshape(w_shape)
        db = gm.sum(axis=1, dtype=np.float64).astype(g.dtype)
        dcols = (gm.T @ self.wmat).reshape(out + (ci, kt, kh, kw))
        dxp = np.zeros(xp_shape, dtype=g.dtype)
        st, sh, sw = stride
        for a in range(kt):
            for b in range(kh):
                for c in range(kw):
                    dxp[
                        :,
                        a : a + st * out[0] : st,
                        b : b + sh * out[1] : sh,
                        c : c + sw * out[2] : sw,
                    ] += dcols[..., a, b, c].transpose(3, 0, 1, 2)
        pt, ph, pw = padding
        dx = dxp[:, pt : pt + x_shape[1], ph : ph + x_shape[2], pw : pw + x_shape[3]]
        return np.ascontiguousarray(dx), dw, db


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic 1-D linear resampling matrix, align-corners=False."""
    a = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        a[i, i0] += 1.0 - frac
        a[i, i1] += frac
    return a.astype(dtype)


class BilinearInterp(Function):
    """Per-frame bilinear resize of a ``T x H x W x D`` field."""

    name = "bilinear_interp"

    def forward(self, x, new_h: int = 1, new_w: int = 1):
        if new_h < 1 or new_w < 1:
            raise DimensionError(f"bilinear_interp: target size {new_h}x{new_w} must be positive")
        t, h, w, d = x.shape
        self.ah = interp_matrix(h, new_h, x.dtype)
        self.aw = interp_matrix(w, new_w, x.dtype)
        self.in_shape = x.shape
        rows = (self.ah @ x.reshape(t, h, w * d)).reshape(t, new_h, w, d)
        out = rows.transpose(0, 1, 3, 2) @ self.aw.T
        return np.ascontiguousarray(out.transpose(0, 1, 3, 2))

    def backward(self, g):
        t, h, w, d = self.in_shape
        nh = g.shape[1]
        rows = (g.transpose(0, 1, 3, 2) @ self.aw).transpose(0, 1, 3, 2)
        dx = self.ah.T @ np.ascontiguousarray(rows).reshape(t, nh, w * d)
        return (dx.reshape(self.in_shape),)


# --------------------------------------------------------------------------- losses


class BCEWithLogits(Function):
    name = "bce_with_logits"

    def forward(self, logits, target):
        if logits.shape != target.shape:
            raise DimensionError(f"bce_with_logits: {logits.shape} vs target {target.shape}")
        self.logits, self.target = logits, target
        per = np.maximum(logits, 0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
        return np.asarray(per.mean(dtype=np.float64), dtype=logits.dtype)

    def backward(self, g):
        p = 0.5 * (1.0 + np.tanh(0.5 * self.logits))
        return g * (p - self.target) / self.logits.size, None


class DiceLoss(Function):
    name = "dice_loss"

    def forward(self, probs, target, eps: float = 1e-6):
        if probs.shape != target.shape:
            raise DimensionError(f"dice_loss: {probs.shape} vs target {target.shape}")
        self.inter = float((probs * target).sum(dtype=np.float64))
        self.total = float(probs.sum(dtype=np.float64) + target.sum(dtype=np.float64))
        self.target, self.eps = target, eps
        return np.asarray(1.0 - (2 * self.inter + eps) / (self.total + eps), dtype=probs.dtype)

    def backward(self, g):
        s = self.total + self.eps
        grad = -(2 * self.target * s - (2 * self.inter + self.eps)) / (s * s)
        return (g * grad).astype(g.dtype), None


# --------------------------------------------------------------------------- functional API


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim == 1 and a.ndim > 1:
        return AddBias.apply(a, b)
    return Add.apply(a, b)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    return AddBias.apply(x, b)


def scale(x, factor: float) -> Tensor:
    return Scale.apply(_as_tensor(x), factor=float(factor))


def mul(a, b) -> Tensor:
    return Mul.apply(_as_tensor(a), _as_tensor(b))


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(x, axes=axes)


def concat_last_axis(*xs: Tensor) -> Tensor:
    return ConcatLast.apply(*xs)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    return TakeRows.apply(x, index=np.asarray(index))


def replace_rows(x: Tensor, index: np.ndarray, y: Tensor) -> Tensor:
    return ReplaceRows.apply(x, y, index=np.asarray(index))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = MatMul.apply(x, weight)
    return y if bias is None else AddBias.apply(y, bias)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the tensor method
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


def max_last_axis(x: Tensor) -> Tensor:
    return MaxLast.apply(x)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis. NaN inputs propagate to NaN outputs."""
    return Softmax.apply(x)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gain, bias, eps=eps)


def group_norm(x: Tensor, gain: Tensor, bias: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    return GroupNorm.apply(x, gain, bias, groups=groups, eps=eps)


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    if bias is None:
        return Conv3d.apply(x, weight, stride=stride, padding=padding)
    return Conv3d.apply(x, weight, bias, stride=stride, padding=padding)


def bilinear_interp(x: Tensor, new_h: int, new_w: int) -> Tensor:
    return BilinearInterp.apply(x, new_h=int(new_h), new_w=int(new_w))


def bce_with_logits(logits: Tensor, target) -> Tensor:
    return BCEWithLogits.apply(logits, _as_tensor(target))


def dice_loss(probs: Tensor, target, eps: float = 1e-6) -> Tensor:
    return DiceLoss.apply(probs, _as_tensor(target), eps=eps)
