"""
ReferenceNet: a small video UNet predicting the noise added to an N-frame
latent clip, conditioned on one identity token and a few text tokens through
decoupled cross-attention, with a temporal motion block after every 2D stage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from numeric import Tensor, as_tensor, concat, conv2d, linear, repeat_batch, reshape, silu, take_rows
from talk_core.errors import ConfigurationError, DimensionError

from .attention import ConditionStream
from .blocks import (
    apply_conv,
    apply_norm,
    attention_block,
    attention_block_specs,
    conv_specs,
    downsample,
    inject,
    norm_specs,
    resblock,
    resblock_specs,
    upsample,
)
from .motion import MotionBlockParams, from_spatial_batch, motion_block_spatial, motion_specs, to_spatial_batch
from .params import ParamSpec, Params, Scope, materialize, scoped, spec_count, to_params

logger = logging.getLogger(__name__)

# ReferenceNet combines identity and text attention with fixed unit weights.
REFERENCE_STREAM_WEIGHTS = (1.0, 1.0)

Timesteps = Union[int, Sequence[int], np.ndarray]


class UNetConfig(BaseModel):
    height: int = Field(default=16, ge=1, description="Latent height in pixels")
    width: int = Field(default=16, ge=1, description="Latent width in pixels")
    frames: int = Field(default=8, ge=1, description="Frames per training clip (N)")
    channels: int = Field(default=3, ge=1, description="Latent channels")
    base_channels: int = Field(default=32, ge=2, description="Channels of the first resolution level")
    channel_mult: Tuple[int, ...] = Field(default=(1, 2), description="Channel multiplier per level")
    attn_dim: int = Field(default=64, ge=1, description="Inner width of every cross-attention block")
    heads: int = Field(default=1, ge=1, description="Attention heads")
    norm_groups: int = Field(default=8, ge=1, description="Group-norm group count")
    id_dim: int = Field(default=64, ge=1, description="Identity embedding width")
    text_dim: int = Field(default=64, ge=1, description="Text token embedding width")
    text_tokens: int = Field(default=4, ge=1, description="Text tokens per prompt (padded)")
    vocab_size: int = Field(default=16, ge=1, description="Rows of the text embedding table")
    cond_dim: int = Field(default=32, ge=2, description="Width of control condition tokens")
    cond_grid: int = Field(default=4, ge=1, description="Control condition tokens per side")
    max_frames: int = Field(default=64, ge=1, description="Length of the motion positional table")
    unified_attention: bool = Field(
        default=False,
        description="One key/value stream for identity+text tokens and one for landmark+contour tokens",
    )

    @property
    def levels(self) -> int:
        return len(self.channel_mult)

    @property
    def level_channels(self) -> List[int]:
        return [self.base_channels * m for m in self.channel_mult]

    @property
    def temb_dim(self) -> int:
        return 4 * self.base_channels

    @property
    def reference_cond_dims(self) -> List[int]:
        return [self.id_dim] if self.unified_attention else [self.id_dim, self.text_dim]

    def norm_widths(self) -> List[int]:
        chs = self.level_channels
        widths = list(chs) + [chs[-1] + chs[-1]] + [chs[l] + chs[l - 1] for l in range(1, self.levels)]
        return widths

    @model_validator(mode="after")
    def _check_geometry(self) -> "UNetConfig":
        if not self.channel_mult or any(m < 1 for m in self.channel_mult):
            raise ConfigurationError("channel_mult needs at least one positive multiplier")
        factor = 2 ** (self.levels - 1)
        if self.height % factor or self.width % factor:
            raise ConfigurationError(f"latent {self.height}x{self.width} not divisible by 2^(levels-1) = {factor}")
        bad = [w for w in self.norm_widths() if w % self.norm_groups]
        if bad:
            raise ConfigurationError(f"{self.norm_groups} groups do not divide channel widths {bad}")
        if any(ch % 2 for ch in self.level_channels) or self.cond_dim % 2:
            raise ConfigurationError("positional encodings need even channel widths")
        if self.base_channels % 2:
            raise ConfigurationError(f"timestep embedding width base_channels={self.base_channels} must be even")
        if self.attn_dim % self.heads or any(ch % self.heads for ch in self.level_channels):
            raise ConfigurationError(f"{self.heads} heads do not divide every attention width")
        if self.height % self.cond_grid or self.height != self.width:
            raise ConfigurationError(
                f"condition grid {self.cond_grid} needs a square latent it divides, got {self.height}x{self.width}"
            )
        if self.frames > self.max_frames:
            raise ConfigurationError(f"{self.frames} frames exceed max_frames={self.max_frames}")
        if self.unified_attention and self.id_dim != self.text_dim:
            raise ConfigurationError("unified attention needs id_dim == text_dim")
        return self


@dataclass(frozen=True)
class ConditionSet:
    """Per-clip identity embedding [b, d_id] and padded text token ids [b, n_tok]."""

    identity: np.ndarray
    text_ids: np.ndarray

    def __post_init__(self) -> None:
        identity = np.atleast_2d(np.asarray(self.identity, dtype=np.float32))
        text_ids = np.atleast_2d(np.asarray(self.text_ids, dtype=np.int64))
        if identity.ndim != 2 or text_ids.ndim != 2:
            raise DimensionError(f"conditions must be [b, d] and [b, n_tok], got {identity.shape}, {text_ids.shape}")
        if identity.shape[0] != text_ids.shape[0]:
            raise DimensionError(f"identity batch {identity.shape[0]} != text batch {text_ids.shape[0]}")
        if not np.all(np.isfinite(identity)):
            raise DimensionError("identity embedding has non-finite values")
        object.__setattr__(self, "identity", identity)
        object.__setattr__(self, "text_ids", text_ids)

    @property
    def batch(self) -> int:
        return self.identity.shape[0]

    def broadcast_to(self, batch: int) -> "ConditionSet":
        if self.batch == batch:
            return self
        if self.batch != 1:
            raise DimensionError(f"conditions for {self.batch} clips cannot serve a batch of {batch}")
        return ConditionSet(np.repeat(self.identity, batch, axis=0), np.repeat(self.text_ids, batch, axis=0))


def timestep_embedding(t: int, d: int, num_steps: Optional[int] = None) -> Tensor:
    """Raw sinusoidal embedding: [sin(t·r_0), cos(t·r_0), sin(t·r_1), ...]."""
    if t < 0 or (num_steps is not None and t >= num_steps):
        raise ConfigurationError(f"timestep {t} outside [0, {num_steps})")
    if d % 2:
        raise ConfigurationError(f"timestep embedding width must be even, got {d}")
    rates = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    emb = np.zeros(d, dtype=np.float64)
    emb[0::2] = np.sin(t * rates)
    emb[1::2] = np.cos(t * rates)
    return Tensor(emb)


def _timestep_list(t: Timesteps, batch: int) -> List[int]:
    values = np.asarray(t, dtype=np.int64).reshape(-1)
    if values.size == 1:
        values = np.repeat(values, batch)
    if values.size != batch:
        raise DimensionError(f"{values.size} timesteps for a batch of {batch}")
    return [int(v) for v in values]


def time_mlp(t: Timesteps, batch: int, scope: Scope, config: UNetConfig, num_steps: Optional[int] = None) -> Tensor:
    """Sinusoid → linear → SiLU → linear, one row per batch element."""
    raw = np.stack([timestep_embedding(v, config.base_channels, num_steps).data for v in _timestep_list(t, batch)])
    hidden = silu(linear(Tensor(raw), scope["l1.weight"], scope["l1.bias"]))
    return linear(hidden, scope["l2.weight"], scope["l2.bias"])


def time_specs(config: UNetConfig) -> List[ParamSpec]:
    base, temb = config.base_channels, config.temb_dim
    return [
        ("l1.weight", (base, temb), "dense"),
        ("l1.bias", (temb,), "zeros"),
        ("l2.weight", (temb, temb), "dense"),
        ("l2.bias", (temb,), "zeros"),
    ]


def _stage_specs(cin: int, cout: int, config: UNetConfig) -> List[ParamSpec]:
    return (
        scoped("res", resblock_specs(cin, cout, config.temb_dim))
        + scoped("xattn", attention_block_specs(cout, config.attn_dim, config.reference_cond_dims))
        + scoped("motion", motion_specs(cout, cout))
    )


def denoiser_specs(config: UNetConfig) -> List[ParamSpec]:
    chs = config.level_channels
    last = config.levels - 1
    specs = scoped("time", time_specs(config))
    specs += [("text.table", (config.vocab_size, config.text_dim), "embed")]
    specs += scoped("conv_in", conv_specs(chs[0], config.channels, 3))
    cin = chs[0]
    for level, ch in enumerate(chs):
        specs += scoped(f"down{level}", _stage_specs(cin, ch, config))
        if level < last:
            specs += scoped(f"down{level}.downsample", conv_specs(ch, ch, 3))
        cin = ch
    specs += scoped("mid", _stage_specs(cin, cin, config))
    for level in reversed(range(config.levels)):
        specs += scoped(f"up{level}", _stage_specs(cin + chs[level], chs[level], config))
        if level > 0:
            specs += scoped(f"up{level}.upsample", conv_specs(chs[level], chs[level], 3))
        cin = chs[level]
    specs += scoped("out.norm", norm_specs(cin))
    specs += scoped("out.conv", conv_specs(config.channels, cin, 3))
    return scoped("unet", specs)


def count_params(config: UNetConfig) -> int:
    return spec_count(denoiser_specs(config))


def init_denoiser(config: UNetConfig, seed: int = 0) -> Params:
    params = to_params(materialize(denoiser_specs(config), np.random.default_rng(seed)))
    logger.debug("denoiser initialised: %d parameters (seed %d)", count_params(config), seed)
    return params


def motion_param_names(params: Mapping[str, Tensor]) -> List[str]:
    return [name for name in params if name.startswith("unet.") and ".motion." in name]


def text_embedding(conds: ConditionSet, params: Mapping[str, Tensor], config: UNetConfig) -> Tensor:
    if conds.text_ids.shape[1] != config.text_tokens:
        raise DimensionError(f"expected {config.text_tokens} text tokens, got {conds.text_ids.shape[1]}")
    rows = take_rows(params["unet.text.table"], conds.text_ids.reshape(-1))
    return reshape(rows, (conds.batch, config.text_tokens, config.text_dim))


def reference_streams(
    conds: ConditionSet,
    params: Mapping[str, Tensor],
    config: UNetConfig,
    frames: int,
) -> List[ConditionStream]:
    """Identity and text streams, repeated so every frame sees its clip's conditions."""
    if conds.identity.shape[1] != config.id_dim:
        raise DimensionError(f"identity embedding width {conds.identity.shape[1]} != {config.id_dim}")
    identity = Tensor(conds.identity.reshape(conds.batch, 1, config.id_dim))
    text = text_embedding(conds, params, config)
    tokens = [concat([identity, text], axis=1)] if config.unified_attention else [identity, text]
    return [ConditionStream(repeat_batch(tok, frames), w) for tok, w in zip(tokens, REFERENCE_STREAM_WEIGHTS)]


def _check_latent(z: Tensor, config: UNetConfig) -> None:
    if z.ndim != 5:
        raise DimensionError(f"latent must be [b, c, N, h, w], got {z.shape}")
    _, c, n, h, w = z.shape
    if (c, h, w) != (config.channels, config.height, config.width):
        raise DimensionError(
            f"latent {z.shape} does not match config ({config.channels}, N, {config.height}, {config.width})"
        )
    if n > config.max_frames:
        raise ConfigurationError(f"{n} frames exceed max_frames={config.max_frames}")


def _stage(h: Tensor, temb: Tensor, streams: List[ConditionStream], scope: Scope, config: UNetConfig, frames: int):
    h = resblock(h, temb, scope.child("res"), config.norm_groups)
    h = attention_block(h, streams, scope.child("xattn"), config.norm_groups, config.heads)
    motion = MotionBlockParams.from_scope(scope.child("motion"), config.max_frames, config.heads)
    return motion_block_spatial(h, frames, motion)


def denoise_forward(
    z: object,
    t: Timesteps,
    conds: ConditionSet,
    params: Mapping[str, Tensor],
    config: UNetConfig,
    residuals: Optional[Sequence[Tensor]] = None,
    num_steps: Optional[int] = None,
) -> Tensor:
    """
    Predict ε̂ for latent clips z [b, c, N, h, w] at timestep(s) t.

    ``residuals`` (one per level plus one for the middle stage) come from
    the control branch and are added to the decoder skip connections.
    """
    z = as_tensor(z)
    _check_latent(z, config)
    b, _, n, _, _ = z.shape
    conds = conds.broadcast_to(b)
    scope = Scope(params, "unet")

    temb = repeat_batch(time_mlp(t, b, scope.child("time"), config, num_steps), n)
    streams = reference_streams(conds, params, config, n)

    h = apply_conv(to_spatial_batch(z), scope.child("conv_in"), padding=1)
    skips: List[Tensor] = []
    for level in range(config.levels):
        h = _stage(h, temb, streams, scope.child(f"down{level}"), config, n)
        skips.append(h)
        if level < config.levels - 1:
            h = downsample(h, scope.child(f"down{level}.downsample"))
    h = _stage(h, temb, streams, scope.child("mid"), config, n)

    if residuals is not None:
        if len(residuals) != config.levels + 1:
            raise DimensionError(f"expected {config.levels + 1} control residuals, got {len(residuals)}")
        skips = inject(skips, residuals[: config.levels])
        (h,) = inject([h], residuals[config.levels:])

    for level in reversed(range(config.levels)):
        h = concat([h, skips[level]], axis=1)
        h = _stage(h, temb, streams, scope.child(f"up{level}"), config, n)
        if level > 0:
            h = upsample(h, scope.child(f"up{level}.upsample"))
    out = silu(apply_norm(h, scope.child("out.norm"), config.norm_groups))
    out = conv2d(out, scope["out.conv.weight"], scope["out.conv.bias"], padding=1)
    return from_spatial_batch(out, n)


__all__ = [
    "ConditionSet",
    "REFERENCE_STREAM_WEIGHTS",
    "UNetConfig",
    "count_params",
    "denoise_forward",
    "denoiser_specs",
    "init_denoiser",
    "motion_param_names",
    "reference_streams",
    "text_embedding",
    "time_mlp",
    "timestep_embedding",
]
