"""
Temporal motion block: every spatial location of a clip becomes a length-N
sequence of channel vectors, gets frame positions added, runs self-attention
across frames and is written back through a zero-initialised projection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from numeric import Tensor, add, as_tensor, linear, permute, reshape
from talk_core.errors import ConfigurationError, DimensionError

from .attention import (
    AttentionParams,
    attention_specs,
    merge_heads,
    positional_encoding,
    scaled_dot_attention,
    split_heads,
)
from .params import ParamSpec, Scope, materialize, scoped


def _require_rank5(z: Tensor) -> None:
    if z.ndim != 5:
        raise DimensionError(f"expected [b, c, N, h, w], got shape {z.shape}")


def to_spatial_batch(z: object) -> Tensor:
    """[b, c, N, h, w] -> [b·N, c, h, w]; (bi, ci, ni, hi, wi) lands at (bi·N + ni, ci, hi, wi)."""
    z = as_tensor(z)
    _require_rank5(z)
    b, c, n, h, w = z.shape
    return reshape(permute(z, (0, 2, 1, 3, 4)), (b * n, c, h, w))


def from_spatial_batch(x: object, frames: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[0] % frames:
        raise DimensionError(f"cannot split batch of {x.shape} into clips of {frames} frames")
    bn, c, h, w = x.shape
    return permute(reshape(x, (bn // frames, frames, c, h, w)), (0, 2, 1, 3, 4))


def to_temporal_batch(z: object) -> Tensor:
    """[b, c, N, h, w] -> [b·h·w, N, c]; each spatial location is an independent sequence."""
    z = as_tensor(z)
    _require_rank5(z)
    b, c, n, h, w = z.shape
    return reshape(permute(z, (0, 3, 4, 2, 1)), (b * h * w, n, c))


def from_temporal_batch(x: object, batch: int, height: int, width: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] != batch * height * width:
        raise DimensionError(f"cannot fold {x.shape} back to batch={batch}, h={height}, w={width}")
    _, n, c = x.shape
    return permute(reshape(x, (batch, height, width, n, c)), (0, 4, 3, 1, 2))


@dataclass(frozen=True)
class MotionBlockParams:
    attention: AttentionParams
    out_weight: Tensor
    out_bias: Tensor
    pe: Tensor

    @property
    def channels(self) -> int:
        return self.out_weight.shape[0]

    @property
    def max_frames(self) -> int:
        return self.pe.shape[0]

    @classmethod
    def from_scope(cls, scope: Scope, max_frames: int, heads: int = 1) -> "MotionBlockParams":
        out_weight = scope["out.weight"]
        return cls(
            attention=AttentionParams.from_scope(scope.child("attn"), n_streams=1, heads=heads),
            out_weight=out_weight,
            out_bias=scope["out.bias"],
            pe=positional_encoding(max_frames, out_weight.shape[0]),
        )


def motion_specs(channels: int, d_inner: int) -> List[ParamSpec]:
    """Attention weights are random; the output projection starts at exactly zero."""
    return scoped("attn", attention_specs(channels, d_inner, [channels])) + [
        ("out.weight", (channels, channels), "zeros"),
        ("out.bias", (channels,), "zeros"),
    ]


def init_motion_block(rng: np.random.Generator, channels: int, d_inner: int) -> dict[str, np.ndarray]:
    return materialize(motion_specs(channels, d_inner), rng)


def _temporal_attention(z: Tensor, params: MotionBlockParams, return_weights: bool = False):
    _require_rank5(z)
    b, c, n, h, w = z.shape
    if c != params.channels:
        raise DimensionError(f"motion block built for {params.channels} channels, got {c}")
    if n > params.max_frames:
        raise ConfigurationError(f"{n} frames exceed the positional table of {params.max_frames}")
    seq = add(to_temporal_batch(z), Tensor(params.pe.data[:n]))
    attn = params.attention
    q = linear(seq, attn.wq)
    k = linear(seq, attn.keys[0])
    v = linear(seq, attn.values[0])
    attended, weights = scaled_dot_attention(
        split_heads(q, attn.heads), split_heads(k, attn.heads), split_heads(v, attn.heads), return_weights=True
    )
    attended = merge_heads(attended, attn.heads)
    mixed = linear(linear(attended, attn.wo), params.out_weight, params.out_bias)
    return (mixed, weights) if return_weights else mixed


def temporal_attention_weights(z: object, params: MotionBlockParams) -> Tensor:
    """Frame-to-frame attention weights, one [N, N] matrix per (batch, location)."""
    _, weights = _temporal_attention(as_tensor(z), params, return_weights=True)
    return weights


def motion_block_forward(z: object, params: MotionBlockParams) -> Tensor:
    """z + restore(OutProj(TemporalSelfAttn(to_temporal_batch(z) + PE)))."""
    z = as_tensor(z)
    mixed = _temporal_attention(z, params)
    b, _, _, h, w = z.shape
    return add(z, from_temporal_batch(mixed, b, h, w))


def motion_block_spatial(x: object, frames: int, params: MotionBlockParams) -> Tensor:
    """Apply the block to UNet activations kept in [b·N, c, h, w] layout."""
    z = from_spatial_batch(x, frames)
    return to_spatial_batch(motion_block_forward(z, params))
