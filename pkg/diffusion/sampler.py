"""DDIM / DDPM reverse steps and the N-frame clip sampler."""
from __future__ import annotations

import logging
from typing import List, Mapping, Optional

import numpy as np
from pydantic import BaseModel, Field
from typing_extensions import Literal

from models import ConditionSet, ControlConditions, UNetConfig, predict_noise
from numeric import Tensor
from talk_core.errors import ConfigurationError, DimensionError, StepOrderError

from .schedule import NoiseSchedule, decode

logger = logging.getLogger(__name__)


class SamplerConfig(BaseModel):
    kind: Literal["ddim", "ddpm"] = Field(default="ddim", description="Reverse process")
    sample_steps: int = Field(default=50, ge=1, description="Denoising steps from pure noise to the clean sample")
    eta: float = Field(default=0.0, ge=0.0, le=1.0, description="DDIM stochasticity (0 = deterministic)")
    seed: int = Field(default=0, description="Seed of the initial noise and any per-step noise")

    @property
    def stochastic(self) -> bool:
        return self.kind == "ddpm" or self.eta > 0.0

    def check(self, schedule: NoiseSchedule) -> None:
        if self.sample_steps > schedule.num_steps:
            raise ConfigurationError(f"{self.sample_steps} sampling steps exceed schedule length {schedule.num_steps}")


def timestep_grid(num_steps: int, sample_steps: int) -> List[int]:
    """Descending integer timesteps from T−1 to 0."""
    if not 1 <= sample_steps <= num_steps:
        raise ConfigurationError(f"sample_steps must lie in [1, {num_steps}], got {sample_steps}")
    grid: List[int] = []
    for value in np.rint(np.linspace(num_steps - 1, 0, sample_steps)).astype(int):
        if not grid or value != grid[-1]:
            grid.append(int(value))
    return grid


def _check_order(t: int, t_prev: int, schedule: NoiseSchedule) -> None:
    if not -1 <= t_prev < t < schedule.num_steps:
        raise StepOrderError(f"reverse step must go from t to a smaller t_prev >= -1, got {t} -> {t_prev}")


def predict_clean(z_t: np.ndarray, eps_hat: np.ndarray, alpha_bar: float) -> np.ndarray:
    return (z_t - np.sqrt(1.0 - alpha_bar) * eps_hat) / np.sqrt(alpha_bar)


def ddim_step(
    z_t: np.ndarray,
    t: int,
    t_prev: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """x0-prediction DDIM update; t_prev = -1 lands on the clean sample."""
    _check_order(t, t_prev, schedule)
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if z_t.shape != eps_hat.shape:
        raise DimensionError(f"latent {z_t.shape} and noise estimate {eps_hat.shape} differ")
    ab_t, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
    x0 = predict_clean(z_t, eps_hat, ab_t)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    out = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0)) * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise ConfigurationError("stochastic DDIM step needs a noise draw")
        out = out + sigma * np.asarray(noise, dtype=np.float64)
    return out


def ddpm_step(
    z_t: np.ndarray,
    t: int,
    t_prev: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Ancestral step with respaced beta' = 1 − ab_t/ab_prev, so skipped grids stay consistent."""
    _check_order(t, t_prev, schedule)
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if z_t.shape != eps_hat.shape:
        raise DimensionError(f"latent {z_t.shape} and noise estimate {eps_hat.shape} differ")
    ab_t, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
    beta = 1.0 - ab_t / ab_prev
    x0 = predict_clean(z_t, eps_hat, ab_t)
    mean = (np.sqrt(ab_prev) * beta / (1.0 - ab_t)) * x0 + (np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t)) * z_t
    if t_prev < 0:
        return mean
    if noise is None:
        raise ConfigurationError("DDPM step needs a noise draw")
    variance = beta * (1.0 - ab_prev) / (1.0 - ab_t)
    return mean + np.sqrt(variance) * np.asarray(noise, dtype=np.float64)


def reverse_step(
    z_t: np.ndarray,
    t: int,
    t_prev: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    sampler: SamplerConfig,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    if sampler.kind == "ddpm":
        out = ddpm_step(z_t, t, t_prev, eps_hat, schedule, noise)
    else:
        out = ddim_step(z_t, t, t_prev, eps_hat, schedule, sampler.eta, noise)
    return out.astype(np.float32)


def sample_clip(
    conds: ConditionSet,
    control: Optional[ControlConditions],
    params: Mapping[str, Tensor],
    config: UNetConfig,
    schedule: NoiseSchedule,
    sampler: SamplerConfig,
    frames: Optional[int] = None,
) -> np.ndarray:
    """Denoise pure noise into decoded clips [b, c, N, h, w] with values in [0, 1]."""
    sampler.check(schedule)
    frames = frames or (control.frames if control is not None else config.frames)
    shape = (conds.batch, config.channels, frames, config.height, config.width)
    rng = np.random.default_rng(sampler.seed)
    z = rng.standard_normal(shape).astype(np.float32)
    grid = timestep_grid(schedule.num_steps, sampler.sample_steps)
    for i, t in enumerate(grid):
        t_prev = grid[i + 1] if i + 1 < len(grid) else -1
        eps_hat = predict_noise(Tensor(z), t, conds, control, params, config, schedule.num_steps).data
        noise = rng.standard_normal(shape) if sampler.stochastic else None
        z = reverse_step(z, t, t_prev, eps_hat, schedule, sampler, noise)
    logger.debug("sampled %s with %d %s steps (seed %d)", shape, len(grid), sampler.kind, sampler.seed)
    return decode(z)
