"""Differentiable primitives over NCHW tensors.

Convolutions follow the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Tensor, make_result

__all__ = [
    "ShapeError",
    "conv2d",
    "transposed_conv2d",
    "max_pool2d",
    "BatchNormState",
    "batch_norm2d",
    "relu",
    "concat_crop",
    "center_crop",
    "softmax_cross_entropy",
    "softmax",
    "weighted_sum",
]


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the primitive."""


def _im2col3(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """Zero-padded (N, C, H+2, W+2) -> (N, C*9, H*W), rows ordered (c, dy, dx)."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, 9, h, w), dtype=xp.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[:, :, k] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(n, c * 9, h * w)


def _col2im3(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`_im2col3`, with the padding frame dropped."""
    n = cols.shape[0]
    cols = cols.reshape(n, c, 9, h, w)
    xp = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        xp[:, :, dy:dy + h, dx:dx + w] += cols[:, :, k]
    return xp[:, :, 1:h + 1, 1:w + 1]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 convolution with zero padding 1; spatial size is preserved.

    ``out[n,o,y,x] = bias[o] + sum_{c,dy,dx} in[n,c,y+dy-1,x+dx-1] * w[o,c,dy,dx]``
    """
    xv, wv = x.values, weight.values
    if xv.ndim != 4 or wv.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OutC x InC x 3 x 3 weight")
    if wv.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernel must be 3x3, got {wv.shape[2:]}")
    if xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"input has {xv.shape[1]} channels, weight expects {wv.shape[1]}")
    if bias is not None and bias.values.shape != (wv.shape[0],):
        raise ShapeError("bias must have one entry per output channel")
    n, c, h, w = xv.shape
    oc = wv.shape[0]

    cols = _im2col3(np.pad(xv, ((0, 0), (0, 0), (1, 1), (1, 1))), h, w)
    w2 = wv.reshape(oc, c * 9)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.values[None, :, None]
    out = out.reshape(n, oc, h, w)

    def vjp(g):
        g2 = g.reshape(n, oc, h * w)
        gw = gx = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wv.shape)
        if x.requires_grad:
            gx = _col2im3(np.matmul(w2.T, g2), c, h, w)
        if bias is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("conv2d", out, inputs, vjp)


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2x2 transposed convolution with stride 2: H x W -> 2H x 2W.

    ``out[n, o, 2y+dy, 2x+dx] = sum_c in[n, c, y, x] * w[c, o, dy, dx]``.
    """
    xv, wv = x.values, weight.values
    if xv.ndim != 4 or wv.ndim != 4 or wv.shape[2:] != (2, 2):
        raise ShapeError("transposed_conv2d expects NCHW input and InC x OutC x 2 x 2 weight")
    if xv.shape[1] != wv.shape[0]:
        raise ShapeError(f"input has {xv.shape[1]} channels, weight expects {wv.shape[0]}")
    n, _, h, w = xv.shape
    if h < 1 or w < 1:
        raise ShapeError("spatial dims must be >= 1")
    oc = wv.shape[1]
    # (N, H, W, O, 2, 2) -> (N, O, H, 2, W, 2)
    t = np.tensordot(xv, wv, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5)
    out = t.reshape(n, oc, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.values[None, :, None, None]
    out = np.ascontiguousarray(out)

    def vjp(g):
        g6 = g.reshape(n, oc, h, 2, w, 2)
        gx = np.tensordot(g6, wv, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = np.tensordot(xv, g6, axes=([0, 2, 3], [0, 2, 4])) if weight.requires_grad else None
        grads = [None if gx is None else np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("transposed_conv2d", out, inputs, vjp)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2.

    The gradient goes to the window maximum; ties go to the first element
    in row-major order.
    """
    xv = x.values
    n, c, h, w = xv.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    win = xv.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return make_result("max_pool2d", out, (x,), vjp)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer (defaults: mean 0, var 1)."""

    channels: int
    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)
    num_batches: int = 0

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels)
        if self.running_var is None:
            self.running_var = np.ones(self.channels)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, train: bool = True) -> Tensor:
    """Per-channel normalisation over N, H, W followed by scale and shift.

    In training mode batch statistics are used and the running estimates are
    updated by an exponential moving average (running variance uses the
    unbiased batch variance). In eval mode the running estimates are used.
    """
    xv = x.values
    if xv.ndim != 4 or xv.shape[1] != gamma.values.shape[0] or gamma.values.shape != beta.values.shape:
        raise ShapeError("batch_norm2d channel count mismatch")
    if state.channels != xv.shape[1]:
        raise ShapeError("batch-norm state has the wrong channel count")
    dt = xv.dtype
    gv = gamma.values[None, :, None, None]
    count = xv.shape[0] * xv.shape[2] * xv.shape[3]
    if train:
        mean = xv.mean(axis=(0, 2, 3))
        centered = xv - mean[None, :, None, None].astype(dt)
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = (1.0 / np.sqrt(var + state.eps)).astype(dt)
        xhat = centered * inv_std[None, :, None, None]
        unbiased = var * count / (count - 1) if count > 1 else var
        m = state.momentum
        rdt = state.running_mean.dtype
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(rdt)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(rdt)
        state.num_batches += 1
    else:
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(dt)
        xhat = (xv - state.running_mean.astype(dt)[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gv + beta.values[None, :, None, None]

    def vjp(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gv
            if train:
                s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (inv_std[None, :, None, None] / count) * (count * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv_std[None, :, None, None]
        return gx, gg, gb

    return make_result("batch_norm2d", out, (x, gamma, beta), vjp)


def relu(x: Tensor) -> Tensor:
    pos = x.values > 0
    out = np.maximum(x.values, 0).astype(x.dtype)  # NaN propagates
    return make_result("relu", out, (x,), lambda g: (g * pos,))


def center_crop(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    dh, dw = arr.shape[-2] - h, arr.shape[-1] - w
    if dh < 0 or dw < 0:
        raise ShapeError("crop target larger than source")
    if dh % 2 or dw % 2:
        raise ShapeError(f"copy-and-crop needs even size differences, got {dh}x{dw}")
    return arr[..., dh // 2:dh // 2 + h, dw // 2:dw // 2 + w]


def concat_crop(skip: Tensor, trunk: Tensor) -> Tensor:
    """Center-crop ``skip`` to ``trunk``'s H x W and stack channels (skip first)."""
    sv, tv = skip.values, trunk.values
    if sv.shape[0] != tv.shape[0]:
        raise ShapeError("batch sizes differ")
    h, w = tv.shape[2:]
    cropped = center_crop(sv, h, w)
    cs = sv.shape[1]
    out = np.concatenate([cropped, tv], axis=1)
    dh, dw = (sv.shape[2] - h) // 2, (sv.shape[3] - w) // 2

    def vjp(g):
        gs = None
        if skip.requires_grad:
            gs = np.zeros_like(sv)
            gs[:, :, dh:dh + h, dw:dw + w] = g[:, :cs]
        return gs, g[:, cs:]

    return make_result("concat_crop", out, (skip, trunk), vjp)


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean negative log-likelihood of the target class over all pixels."""
    lv = logits.values
    tgt = np.asarray(target, dtype=bool)
    if tgt.ndim == 2:
        tgt = tgt[None]
    if lv.ndim != 4 or lv.shape[1] != 2:
        raise ShapeError("logits must be N x 2 x H x W")
    if tgt.shape != (lv.shape[0],) + lv.shape[2:]:
        raise ShapeError(f"target shape {tgt.shape} does not match logits {lv.shape}")
    z = lv - lv.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    onehot = np.stack([~tgt, tgt], axis=1).astype(lv.dtype)
    count = tgt.size
    loss = -(logp * onehot).sum() / count

    def vjp(g):
        return ((np.exp(logp) - onehot) * (g / count),)

    return make_result("softmax_cross_entropy", np.asarray(loss, dtype=lv.dtype), (logits,), vjp)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; used to project outputs for gradient checks."""
    wv = np.asarray(weights, dtype=x.dtype)
    if wv.shape != x.dims:
        raise ShapeError("weights must match tensor dims")
    out = np.asarray((x.values * wv).sum(), dtype=x.dtype)
    return make_result("weighted_sum", out, (x,), lambda g: (g * wv,))
