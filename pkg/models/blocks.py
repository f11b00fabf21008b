"""2D building blocks shared by the denoiser and its control branch."""
from __future__ import annotations

from typing import List, Sequence

from numeric import Tensor, add, conv2d, group_norm, linear, permute, reshape, silu, upsample_nearest2d
from talk_core.errors import DimensionError

from .attention import AttentionParams, ConditionStream, attention_specs, decoupled_cross_attention
from .params import ParamSpec, Scope, scoped


def norm_specs(channels: int) -> List[ParamSpec]:
    return [("gamma", (channels,), "ones"), ("beta", (channels,), "zeros")]


def conv_specs(cout: int, cin: int, kernel: int, init: str = "conv") -> List[ParamSpec]:
    return [("weight", (cout, cin, kernel, kernel), init), ("bias", (cout,), "zeros")]


def resblock_specs(cin: int, cout: int, temb_dim: int) -> List[ParamSpec]:
    specs = (
        scoped("norm1", norm_specs(cin))
        + scoped("conv1", conv_specs(cout, cin, 3))
        + [("temb.weight", (temb_dim, cout), "dense"), ("temb.bias", (cout,), "zeros")]
        + scoped("norm2", norm_specs(cout))
        + scoped("conv2", conv_specs(cout, cout, 3))
    )
    if cin != cout:
        specs += scoped("skip", conv_specs(cout, cin, 1))
    return specs


def attention_block_specs(channels: int, d_inner: int, cond_dims: Sequence[int]) -> List[ParamSpec]:
    return scoped("norm", norm_specs(channels)) + scoped("attn", attention_specs(channels, d_inner, cond_dims))


def apply_conv(x: Tensor, scope: Scope, stride: int = 1, padding: int = 0) -> Tensor:
    return conv2d(x, scope["weight"], scope["bias"], stride=stride, padding=padding)


def apply_norm(x: Tensor, scope: Scope, groups: int) -> Tensor:
    return group_norm(x, groups, scope["gamma"], scope["beta"])


def resblock(x: Tensor, temb: Tensor, scope: Scope, groups: int) -> Tensor:
    """GN → SiLU → conv3×3, plus the projected time embedding, GN → SiLU → conv3×3, residual."""
    h = apply_conv(silu(apply_norm(x, scope.child("norm1"), groups)), scope.child("conv1"), padding=1)
    bias = linear(silu(temb), scope["temb.weight"], scope["temb.bias"])
    h = add(h, reshape(bias, bias.shape + (1, 1)))
    h = apply_conv(silu(apply_norm(h, scope.child("norm2"), groups)), scope.child("conv2"), padding=1)
    skip = apply_conv(x, scope.child("skip")) if "skip.weight" in scope else x
    return add(skip, h)


def feature_tokens(x: Tensor) -> Tensor:
    """[B, c, h, w] -> [B, h·w, c]."""
    b, c, h, w = x.shape
    return permute(reshape(x, (b, c, h * w)), (0, 2, 1))


def tokens_to_features(tokens: Tensor, height: int, width: int) -> Tensor:
    b, n, c = tokens.shape
    if n != height * width:
        raise DimensionError(f"{n} tokens cannot fill a {height}x{width} map")
    return reshape(permute(tokens, (0, 2, 1)), (b, c, height, width))


def attention_block(
    x: Tensor,
    streams: Sequence[ConditionStream],
    scope: Scope,
    groups: int,
    heads: int = 1,
) -> Tensor:
    """Residual decoupled cross-attention of every pixel over the condition streams."""
    _, _, h, w = x.shape
    tokens = feature_tokens(apply_norm(x, scope.child("norm"), groups))
    params = AttentionParams.from_scope(scope.child("attn"), n_streams=len(streams), heads=heads)
    attended = decoupled_cross_attention(tokens, streams, params)
    return add(x, tokens_to_features(attended, h, w))


def inject(base_features: Sequence[Tensor], residuals: Sequence[Tensor]) -> List[Tensor]:
    """fused_i = base_i + residual_i, level by level."""
    if len(base_features) != len(residuals):
        raise DimensionError(f"{len(residuals)} residuals for {len(base_features)} feature levels")
    fused = []
    for level, (base, residual) in enumerate(zip(base_features, residuals)):
        if base.shape != residual.shape:
            raise DimensionError(f"level {level}: residual {residual.shape} does not match features {base.shape}")
        fused.append(add(base, residual))
    return fused


def downsample(x: Tensor, scope: Scope) -> Tensor:
    return apply_conv(x, scope, stride=2, padding=1)


def upsample(x: Tensor, scope: Scope) -> Tensor:
    return apply_conv(upsample_nearest2d(x, 2), scope, padding=1)
