"""
AnimateNet: a clone of the denoiser's 2D encoder that reads landmark heatmaps
and a static contour map, mixes them with a two-stream weighted attention per
level and hands zero-conv residuals to the denoiser's skip connections. With
``unified_attention`` both token sets share one key/value projection and carry
no stream weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional

import numpy as np

from numeric import Tensor, add, as_tensor, avg_pool2d, concat, conv2d, repeat_batch, reshape, silu
from talk_core.errors import ConfigurationError, DimensionError

from .attention import ConditionStream, positional_encoding
from .blocks import (
    apply_conv,
    attention_block,
    attention_block_specs,
    conv_specs,
    downsample,
    feature_tokens,
    inject,
    resblock,
    resblock_specs,
)
from .motion import to_spatial_batch
from .params import ParamSpec, Params, Scope, materialize, scoped, spec_count, to_params
from .unet import Timesteps, UNetConfig, time_mlp, time_specs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlConditions:
    """Landmark heatmaps [b, N, 1, h, w] (one per frame) and one contour map [b, 1, h, w] per clip."""

    landmark_heatmaps: np.ndarray
    contour_map: np.ndarray

    def __post_init__(self) -> None:
        heatmaps = np.asarray(self.landmark_heatmaps, dtype=np.float32)
        contour = np.asarray(self.contour_map, dtype=np.float32)
        if heatmaps.ndim == 4:
            heatmaps = heatmaps[None]
        if contour.ndim == 3:
            contour = contour[None]
        if heatmaps.ndim != 5 or heatmaps.shape[2] != 1:
            raise DimensionError(f"landmark heatmaps must be [b, N, 1, h, w], got {heatmaps.shape}")
        if contour.ndim != 4 or contour.shape[1] != 1:
            raise DimensionError(f"contour map must be [b, 1, h, w], got {contour.shape}")
        if heatmaps.shape[0] != contour.shape[0] or heatmaps.shape[-2:] != contour.shape[-2:]:
            raise DimensionError(f"heatmaps {heatmaps.shape} and contour {contour.shape} disagree")
        if heatmaps.size and (heatmaps.min() < 0.0 or heatmaps.max() > 1.0):
            raise ConfigurationError("landmark heatmap values must lie in [0, 1]")
        object.__setattr__(self, "landmark_heatmaps", heatmaps)
        object.__setattr__(self, "contour_map", contour)

    @classmethod
    def from_frames(cls, landmark_heatmaps: np.ndarray, contours: np.ndarray) -> "ControlConditions":
        """Build from per-frame contour maps [N, 1, h, w]; they must all be the same map."""
        contours = np.asarray(contours, dtype=np.float32)
        if not all(np.array_equal(contours[0], c) for c in contours[1:]):
            raise ConfigurationError("contour map must stay unchanged across the frames of a run")
        return cls(landmark_heatmaps, contours[0])

    @property
    def batch(self) -> int:
        return self.landmark_heatmaps.shape[0]

    @property
    def frames(self) -> int:
        return self.landmark_heatmaps.shape[1]

    def window(self, start: int, end: int) -> "ControlConditions":
        """Frame-aligned heatmaps for [start, end); the contour map is shared."""
        return ControlConditions(self.landmark_heatmaps[:, start:end], self.contour_map)

    def broadcast_to(self, batch: int) -> "ControlConditions":
        if self.batch == batch:
            return self
        if self.batch != 1:
            raise DimensionError(f"control conditions for {self.batch} clips cannot serve a batch of {batch}")
        return ControlConditions(
            np.repeat(self.landmark_heatmaps, batch, axis=0), np.repeat(self.contour_map, batch, axis=0)
        )


def _embedder_specs(config: UNetConfig) -> List[ParamSpec]:
    hidden = config.cond_dim // 2
    return scoped("conv1", conv_specs(hidden, 1, 3)) + scoped("conv2", conv_specs(config.cond_dim, hidden, 3))


def _control_cond_dims(config: UNetConfig) -> List[int]:
    return [config.cond_dim] if config.unified_attention else [config.cond_dim, config.cond_dim]


def _control_streams(
    landmark_tokens: Tensor, contour_tokens: Tensor, stage: Scope, config: UNetConfig
) -> List[ConditionStream]:
    if config.unified_attention:
        return [ConditionStream(concat([landmark_tokens, contour_tokens], axis=1), 1.0)]
    return [ConditionStream(landmark_tokens, stage["w1"]), ConditionStream(contour_tokens, stage["w2"])]


def control_specs(config: UNetConfig) -> List[ParamSpec]:
    chs = config.level_channels
    specs = scoped("time", time_specs(config))
    specs += scoped("conv_in", conv_specs(chs[0], config.channels, 3))
    specs += scoped("hint", conv_specs(chs[0], 1, 3, init="zeros"))
    specs += scoped("cond_landmark", _embedder_specs(config))
    specs += scoped("cond_contour", _embedder_specs(config))
    cin = chs[0]
    for level, ch in enumerate(chs):
        stage = scoped("res", resblock_specs(cin, ch, config.temb_dim))
        stage += scoped("xattn", attention_block_specs(ch, config.attn_dim, _control_cond_dims(config)))
        if not config.unified_attention:
            stage += [("w1", (1,), "ones"), ("w2", (1,), "ones")]
        if level < config.levels - 1:
            stage += scoped("downsample", conv_specs(ch, ch, 3))
        specs += scoped(f"down{level}", stage)
        specs += scoped(f"zero{level}", conv_specs(ch, ch, 1, init="zeros"))
        cin = ch
    specs += scoped("mid.res", resblock_specs(cin, cin, config.temb_dim))
    specs += scoped("zero_mid", conv_specs(cin, cin, 1, init="zeros"))
    return scoped("control", specs)


def count_control_params(config: UNetConfig) -> int:
    return spec_count(control_specs(config))


def _cloned(name: str) -> bool:
    body = name[len("control."):]
    return (
        body.startswith(("time.", "conv_in.", "mid.res."))
        or (body.startswith("down") and (".res." in body or ".downsample." in body))
    )


def init_control(config: UNetConfig, seed: int = 0, base: Optional[Mapping[str, Tensor]] = None) -> Params:
    """
    Fresh control parameters. With ``base`` the cloned encoder layers start as
    copies of the denoiser's; zero-convs and the hint conv start at exactly 0
    and the two stream weights start equal at 1.0.
    """
    arrays = materialize(control_specs(config), np.random.default_rng(seed))
    if base is not None:
        for name in arrays:
            source = "unet." + name[len("control."):]
            if _cloned(name) and source in base:
                arrays[name] = np.array(base[source].data, dtype=np.float32)
    logger.debug("control branch initialised: %d parameters", count_control_params(config))
    return to_params(arrays)


def stream_weight_names(params: Mapping[str, Tensor]) -> List[str]:
    return sorted(n for n in params if n.startswith("control.") and n.endswith((".w1", ".w2")))


def zero_conv(x: object, layer: Scope) -> Tensor:
    """1×1 convolution; the layer starts with an all-zero kernel and bias."""
    weight = layer["weight"]
    if weight.shape[2:] != (1, 1):
        raise DimensionError(f"zero conv must be 1x1, got kernel {weight.shape}")
    return conv2d(x, weight, layer["bias"])


def condition_tokens(maps: Tensor, scope: Scope, config: UNetConfig) -> Tensor:
    """Embed [B, 1, h, w] maps into cond_grid² tokens of width cond_dim with token positions added."""
    h = silu(apply_conv(maps, scope.child("conv1"), padding=1))
    h = apply_conv(h, scope.child("conv2"), padding=1)
    pooled = avg_pool2d(h, config.height // config.cond_grid)
    n_tokens = config.cond_grid * config.cond_grid
    positions = reshape(positional_encoding(n_tokens, config.cond_dim), (1, n_tokens, config.cond_dim))
    return add(feature_tokens(pooled), positions)


def _frame_maps(conds: ControlConditions, batch: int, frames: int, config: UNetConfig) -> tuple[Tensor, Tensor]:
    conds = conds.broadcast_to(batch)
    if conds.frames != frames:
        raise DimensionError(f"{conds.frames} landmark heatmaps for a clip of {frames} frames")
    if conds.landmark_heatmaps.shape[-2:] != (config.height, config.width):
        raise DimensionError(f"condition maps {conds.landmark_heatmaps.shape[-2:]} do not match the latent size")
    heatmaps = Tensor(conds.landmark_heatmaps.reshape(batch * frames, 1, config.height, config.width))
    contours = repeat_batch(Tensor(conds.contour_map), frames)
    per_clip = contours.data.reshape(batch, frames, 1, config.height, config.width)
    if not all(np.array_equal(per_clip[:, 0], per_clip[:, k]) for k in range(1, frames)):
        raise ConfigurationError("contour map drifted across the frames of a clip")
    return heatmaps, contours


def control_forward(
    z: object,
    t: Timesteps,
    conds: ControlConditions,
    params: Mapping[str, Tensor],
    config: UNetConfig,
    num_steps: Optional[int] = None,
) -> List[Tensor]:
    """Per-level residuals (plus one for the middle stage), each through its zero conv."""
    z = as_tensor(z)
    if z.ndim != 5:
        raise DimensionError(f"latent must be [b, c, N, h, w], got {z.shape}")
    b, _, n, _, _ = z.shape
    scope = Scope(params, "control")
    heatmaps, contours = _frame_maps(conds, b, n, config)

    temb = repeat_batch(time_mlp(t, b, scope.child("time"), config, num_steps), n)
    landmark_tokens = condition_tokens(heatmaps, scope.child("cond_landmark"), config)
    contour_tokens = condition_tokens(contours, scope.child("cond_contour"), config)

    h = apply_conv(to_spatial_batch(z), scope.child("conv_in"), padding=1)
    h = add(h, apply_conv(heatmaps, scope.child("hint"), padding=1))
    residuals: List[Tensor] = []
    for level in range(config.levels):
        stage = scope.child(f"down{level}")
        h = resblock(h, temb, stage.child("res"), config.norm_groups)
        streams = _control_streams(landmark_tokens, contour_tokens, stage, config)
        h = attention_block(h, streams, stage.child("xattn"), config.norm_groups, config.heads)
        residuals.append(zero_conv(h, scope.child(f"zero{level}")))
        if level < config.levels - 1:
            h = downsample(h, stage.child("downsample"))
    h = resblock(h, temb, scope.child("mid.res"), config.norm_groups)
    residuals.append(zero_conv(h, scope.child("zero_mid")))
    return residuals


__all__ = [
    "ControlConditions",
    "condition_tokens",
    "control_forward",
    "control_specs",
    "count_control_params",
    "init_control",
    "inject",
    "stream_weight_names",
    "zero_conv",
]
