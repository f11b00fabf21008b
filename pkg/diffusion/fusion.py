"""
Progressive sampling fusion for clips longer than one segment.

The frame axis is cut into fixed-length windows that overlap by C frames.
Every denoising step runs each window on its own, then replaces each overlap
with a linear hand-off from the earlier window to the later one and writes the
blended latents back into every window that covers those frames.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from models import ConditionSet, ControlConditions, UNetConfig, predict_noise
from numeric import Tensor
from talk_core.errors import ConfigurationError, DimensionError

from .sampler import SamplerConfig, reverse_step, timestep_grid
from .schedule import NoiseSchedule, decode

logger = logging.getLogger(__name__)

FRAME_AXIS = 2
Window = Tuple[int, int]


@dataclass(frozen=True)
class SegmentPlan:
    total_frames: int
    segment_length: int
    overlap: int
    windows: Tuple[Window, ...]

    def overlap_ranges(self) -> List[Tuple[int, int, int]]:
        """(window index, overlap start, overlap end) for each consecutive pair."""
        ranges = []
        for i in range(len(self.windows) - 1):
            start, end = self.windows[i + 1][0], self.windows[i][1]
            if end > start:
                ranges.append((i, start, end))
        return ranges

    def handoff_pairs(self) -> List[Tuple[int, int]]:
        """Consecutive frame pairs straddling a window start or end."""
        pairs = set()
        for start, end in self.windows:
            if start > 0:
                pairs.add((start - 1, start))
            if end < self.total_frames:
                pairs.add((end - 1, end))
        return sorted(pairs)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["windows"] = [list(w) for w in self.windows]
        return payload


@dataclass(frozen=True)
class BlendWeights:
    alphas: Tuple[float, ...]

    def coefficients(self) -> List[Tuple[float, float]]:
        """(weight on the earlier segment, weight on the later segment) per overlap frame."""
        return [(1.0 - a, a) for a in self.alphas]

    def to_dict(self) -> dict:
        return {"alphas": list(self.alphas)}


def plan_segments(total_frames: int, segment_length: int, overlap: int) -> SegmentPlan:
    if total_frames < 1:
        raise ConfigurationError(f"need at least one frame, got {total_frames}")
    if not 0 < overlap < segment_length:
        raise ConfigurationError(f"overlap must satisfy 0 < C < N_seg, got C={overlap}, N_seg={segment_length}")
    if total_frames <= segment_length:
        windows: List[Window] = [(0, total_frames)]
    else:
        stride = segment_length - overlap
        windows = []
        start = 0
        while True:
            if start + segment_length >= total_frames:
                windows.append((total_frames - segment_length, total_frames))
                break
            windows.append((start, start + segment_length))
            start += stride
    return SegmentPlan(total_frames, segment_length, overlap, tuple(windows))


def blend_weights(overlap: int) -> BlendWeights:
    """alpha_j = j / C for j = 0 .. C−1."""
    if overlap < 1:
        raise ConfigurationError(f"overlap must be >= 1, got {overlap}")
    return BlendWeights(tuple(j / overlap for j in range(overlap)))


def fuse_overlap(x_prev: np.ndarray, x_next: np.ndarray, weights: BlendWeights, axis: int = FRAME_AXIS) -> np.ndarray:
    """fused_j = (1 − alpha_j)·x_prev_j + alpha_j·x_next_j, written as x_prev + alpha·(x_next − x_prev)."""
    x_prev = np.asarray(x_prev)
    x_next = np.asarray(x_next)
    if x_prev.shape != x_next.shape:
        raise DimensionError(f"overlap shapes differ: {x_prev.shape} vs {x_next.shape}")
    if x_prev.shape[axis] != len(weights.alphas):
        raise DimensionError(f"{x_prev.shape[axis]} overlap frames but {len(weights.alphas)} blend weights")
    shape = [1] * x_prev.ndim
    shape[axis] = len(weights.alphas)
    alphas = np.asarray(weights.alphas, dtype=np.float64).reshape(shape)
    prev64 = x_prev.astype(np.float64)
    fused = prev64 + alphas * (x_next.astype(np.float64) - prev64)
    return fused.astype(x_prev.dtype)


def _frames(array: np.ndarray, start: int, end: int) -> np.ndarray:
    return array[:, :, start:end]


def fuse_segments(segments: Sequence[np.ndarray], plan: SegmentPlan) -> List[np.ndarray]:
    """Blend every consecutive overlap and write the result into all covering windows."""
    if len(segments) != len(plan.windows):
        raise DimensionError(f"{len(segments)} segment latents for {len(plan.windows)} windows")
    out = [np.array(s, copy=True) for s in segments]
    for (s0, e0), seg in zip(plan.windows, out):
        if seg.shape[FRAME_AXIS] != e0 - s0:
            raise DimensionError(f"segment with {seg.shape[FRAME_AXIS]} frames misaligned with window [{s0}, {e0})")
    for i, lo, hi in plan.overlap_ranges():
        (s0, _), (s1, _) = plan.windows[i], plan.windows[i + 1]
        fused = fuse_overlap(_frames(out[i], lo - s0, hi - s0), _frames(out[i + 1], lo - s1, hi - s1), blend_weights(hi - lo))
        for k, (s, e) in enumerate(plan.windows):
            a, b = max(s, lo), min(e, hi)
            if a < b:
                out[k][:, :, a - s:b - s] = fused[:, :, a - lo:b - lo]
    return out


def fused_denoise_step(
    segment_latents: Sequence[np.ndarray],
    plan: SegmentPlan,
    t: int,
    t_prev: int,
    conds: ConditionSet,
    control: Optional[ControlConditions],
    params: Mapping[str, Tensor],
    config: UNetConfig,
    schedule: NoiseSchedule,
    sampler: SamplerConfig,
    noise: Optional[np.ndarray] = None,
    fuse: bool = True,
) -> List[np.ndarray]:
    """
    One reverse step for every window under the shared identity/text conditions
    and its own frame-aligned heatmaps, then the overlap blend.
    """
    if len(segment_latents) != len(plan.windows):
        raise DimensionError(f"{len(segment_latents)} segment latents for {len(plan.windows)} windows")
    updated = []
    for (start, end), z in zip(plan.windows, segment_latents):
        window_control = control.window(start, end) if control is not None else None
        eps_hat = predict_noise(Tensor(z), t, conds, window_control, params, config, schedule.num_steps).data
        window_noise = _frames(noise, start, end) if noise is not None else None
        updated.append(reverse_step(z, t, t_prev, eps_hat, schedule, sampler, window_noise))
    if fuse and len(plan.windows) > 1:
        updated = fuse_segments(updated, plan)
    return updated


def assemble_fused(segments: Sequence[np.ndarray], plan: SegmentPlan) -> np.ndarray:
    """Write windows in order; after a final fusion their overlaps agree."""
    first = segments[0]
    out = np.zeros(first.shape[:2] + (plan.total_frames,) + first.shape[3:], dtype=first.dtype)
    for (start, end), seg in zip(plan.windows, segments):
        out[:, :, start:end] = seg
    return out


def assemble_naive(segments: Sequence[np.ndarray], plan: SegmentPlan) -> np.ndarray:
    """Independent-segment concatenation: window i owns [start_i, start_{i+1})."""
    first = segments[0]
    out = np.zeros(first.shape[:2] + (plan.total_frames,) + first.shape[3:], dtype=first.dtype)
    for i, ((start, end), seg) in enumerate(zip(plan.windows, segments)):
        stop = plan.windows[i + 1][0] if i + 1 < len(plan.windows) else end
        out[:, :, start:stop] = seg[:, :, : stop - start]
    return out


def long_sample(
    total_frames: int,
    conds: ConditionSet,
    control: Optional[ControlConditions],
    params: Mapping[str, Tensor],
    config: UNetConfig,
    schedule: NoiseSchedule,
    sampler: SamplerConfig,
    segment_length: int = 16,
    overlap: int = 8,
    fusion: bool = True,
    fusion_every: int = 1,
) -> np.ndarray:
    """
    Full-length clip [c, total_frames, h, w] in [0, 1].

    Initial and per-step noise are drawn once for the whole frame axis and
    sliced per window, so fusion on/off runs share every random draw.
    """
    sampler.check(schedule)
    if fusion_every < 1:
        raise ConfigurationError(f"fusion_every must be >= 1, got {fusion_every}")
    if conds.batch != 1:
        raise DimensionError("long-form sampling generates one clip at a time")
    if control is not None and control.frames != total_frames:
        raise DimensionError(f"{control.frames} landmark heatmaps for {total_frames} frames")
    plan = plan_segments(total_frames, segment_length, overlap)
    shape = (1, config.channels, total_frames, config.height, config.width)
    rng = np.random.default_rng(sampler.seed)
    z_full = rng.standard_normal(shape).astype(np.float32)
    segments = [np.array(_frames(z_full, s, e)) for s, e in plan.windows]
    grid = timestep_grid(schedule.num_steps, sampler.sample_steps)
    logger.info("long sample: %d frames in %d windows, fusion=%s", total_frames, len(plan.windows), fusion)
    for i, t in enumerate(grid):
        t_prev = grid[i + 1] if i + 1 < len(grid) else -1
        noise = rng.standard_normal(shape) if sampler.stochastic else None
        fuse = fusion and (i % fusion_every == 0 or i == len(grid) - 1)
        segments = fused_denoise_step(
            segments, plan, t, t_prev, conds, control, params, config, schedule, sampler, noise, fuse
        )
    latents = assemble_fused(segments, plan) if fusion else assemble_naive(segments, plan)
    return decode(latents)[0]
