"""Noise schedule, samplers, training loop and long-form progressive fusion."""
from .fusion import (
    BlendWeights,
    SegmentPlan,
    assemble_fused,
    assemble_naive,
    blend_weights,
    fuse_overlap,
    fuse_segments,
    fused_denoise_step,
    long_sample,
    plan_segments,
)
from .sampler import SamplerConfig, ddim_step, ddpm_step, reverse_step, sample_clip, timestep_grid
from .schedule import NoiseSchedule, decode, make_schedule, noise_to_level, q_sample, to_latent
from .training import StepResult, Trainer, TrainingBatch, TrainingExample, training_step

__all__ = [
    "BlendWeights",
    "NoiseSchedule",
    "SamplerConfig",
    "SegmentPlan",
    "StepResult",
    "Trainer",
    "TrainingBatch",
    "TrainingExample",
    "assemble_fused",
    "assemble_naive",
    "blend_weights",
    "ddim_step",
    "ddpm_step",
    "decode",
    "fuse_overlap",
    "fuse_segments",
    "fused_denoise_step",
    "long_sample",
    "make_schedule",
    "noise_to_level",
    "plan_segments",
    "q_sample",
    "reverse_step",
    "sample_clip",
    "timestep_grid",
    "to_latent",
    "training_step",
]
