"""Neural-network layers on top of numeric.ops: conv, norms, activations, losses."""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from talk_core.errors import ConfigurationError, DimensionError, NumericFailure

from . import ops
from .tensor import Tensor, as_tensor, record_op


def linear(x: object, weight: object, bias: Optional[object] = None) -> Tensor:
    """``x @ weight (+ bias)`` with weight stored as [in, out]."""
    out = ops.matmul(x, weight)
    return out if bias is None else ops.add(out, bias)


def silu(x: object) -> Tensor:
    x = as_tensor(x)
    x64 = x.data.astype(np.float64)
    sig = 1.0 / (1.0 + np.exp(-x64))

    def backward(g: np.ndarray):
        return (g * (sig + x64 * sig * (1.0 - sig)),)

    return record_op("silu", x64 * sig, (x,), backward)


def conv2d(
    x: object,
    weight: object,
    bias: Optional[object] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    2-D cross-correlation over [b, cin, h, w] with weight [cout, cin, kh, kw].

    Windows are gathered with a strided view and contracted with tensordot;
    the input gradient scatters back one kernel tap at a time.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d kernel {kh}x{kw} does not fit padded input {hp}x{wp}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({cout},)")
        out = out + bias.data[None, :, None, None]
        inputs = inputs + (bias,)

    def backward(g: np.ndarray):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            taps = np.tensordot(g, weight.data.astype(np.float64), axes=([1], [0]))  # b, ho, wo, cin, kh, kw
            gxp = np.zeros((b, cin, hp, wp), dtype=np.float64)
            for i in range(kh):
                rows = slice(i, i + stride * (ho - 1) + 1, stride)
                for j in range(kw):
                    cols = slice(j, j + stride * (wo - 1) + 1, stride)
                    gxp[:, :, rows, cols] += taps[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record_op("conv2d", out, inputs, backward)


def _normalize(x64: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    mean = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (x64 - mean) * inv, inv


def _normalize_backward(g_hat: np.ndarray, x_hat: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (
        g_hat - g_hat.mean(axis=-1, keepdims=True) - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
    )


def group_norm(x: object, groups: int, gamma: object, beta: object, eps: float = 1e-5) -> Tensor:
    """Group normalisation over [b, c, ...] with per-channel affine; statistics in float64."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2:
        raise DimensionError(f"group_norm expects [b, c, ...], got {x.shape}")
    b, c = x.shape[0], x.shape[1]
    if groups < 1 or c % groups:
        raise ConfigurationError(f"group count {groups} does not divide {c} channels")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm affine shapes {gamma.shape}, {beta.shape} != ({c},)")
    affine_shape = (1, c) + (1,) * (x.ndim - 2)

    x_hat, inv = _normalize(x.data.astype(np.float64).reshape(b, groups, -1), eps)
    x_hat = x_hat.reshape(x.shape)
    out = x_hat * gamma.data.reshape(affine_shape) + beta.data.reshape(affine_shape)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def backward(g: np.ndarray):
        g_hat = (g * gamma.data.reshape(affine_shape)).reshape(b, groups, -1)
        gx = _normalize_backward(g_hat, x_hat.reshape(b, groups, -1), inv).reshape(x.shape)
        return gx, (g * x_hat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return record_op("group_norm", out, (x, gamma, beta), backward)


def layer_norm(x: object, gamma: object, beta: object, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with affine parameters of that length."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} != ({d},)")
    x_hat, inv = _normalize(x.data.astype(np.float64), eps)
    out = x_hat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g: np.ndarray):
        gx = _normalize_backward(g * gamma.data, x_hat, inv)
        return gx, (g * x_hat).sum(axis=lead), g.sum(axis=lead)

    return record_op("layer_norm", out, (x, gamma, beta), backward)


def avg_pool2d(x: object, factor: int) -> Tensor:
    x = as_tensor(x)
    b, c, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool2d factor {factor} does not divide {h}x{w}")
    pooled = x.data.astype(np.float64).reshape(b, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(g: np.ndarray):
        spread = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        return (spread / (factor * factor),)

    return record_op("avg_pool2d", pooled, (x,), backward)


def upsample_nearest2d(x: object, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    b, c, h, w = x.shape

    def backward(g: np.ndarray):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record_op("upsample", np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3), (x,), backward)


def mse_loss(pred: object, target: object) -> Tensor:
    """Mean squared error as a 0-d tensor; always checked for finiteness."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    value = np.mean(diff * diff)
    if not np.isfinite(value):
        raise NumericFailure("non-finite loss", {"pred_max_abs": float(np.nanmax(np.abs(pred.data)))})
    count = diff.size

    def backward(g: np.ndarray):
        gd = g * 2.0 * diff / count
        return gd, -gd

    return record_op("mse_loss", np.asarray(value), (pred, target), backward)


__all__ = [
    "linear",
    "silu",
    "conv2d",
    "group_norm",
    "layer_norm",
    "avg_pool2d",
    "upsample_nearest2d",
    "mse_loss",
    "ops",
]
