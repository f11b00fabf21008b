"""Linear beta schedule and closed-form forward noising."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from talk_core.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

Timestep = Union[int, np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t, with t = -1 standing for the clean sample (alpha_bar = 1)."""
        if t == -1:
            return 1.0
        self.check_timestep(t)
        return float(self.alpha_bars[t])

    def check_timestep(self, t: Timestep) -> None:
        values = np.asarray(t)
        if values.size == 0 or values.min() < 0 or values.max() >= self.num_steps:
            raise ConfigurationError(f"timestep {t} outside [0, {self.num_steps})")

    def summary(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "beta_start": float(self.betas[0]),
            "beta_end": float(self.betas[-1]),
            "alpha_bar_last": float(self.alpha_bars[-1]),
        }


def make_schedule(num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if num_steps < 1:
        raise ConfigurationError(f"schedule needs at least one step, got {num_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for array in (betas, alphas, alpha_bars):
        array.setflags(write=False)
    schedule = NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)
    logger.debug("noise schedule %s", schedule.summary())
    return schedule


def noise_to_level(z0: np.ndarray, epsilon: np.ndarray, alpha_bar: Union[float, np.ndarray]) -> np.ndarray:
    """√ab·z0 + √(1−ab)·ε; ``alpha_bar`` may carry one value per leading batch entry."""
    z0 = np.asarray(z0, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if z0.shape != epsilon.shape:
        raise DimensionError(f"q_sample shapes differ: {z0.shape} vs {epsilon.shape}")
    ab = np.asarray(alpha_bar, dtype=np.float64)
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (z0.ndim - ab.ndim))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * epsilon


def q_sample(z0: np.ndarray, t: Timestep, epsilon: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Noise clean latents to step t (a scalar, or one timestep per batch element)."""
    schedule.check_timestep(t)
    return noise_to_level(z0, epsilon, schedule.alpha_bars[np.asarray(t)])


def to_latent(frames: np.ndarray) -> np.ndarray:
    """Pixels in [0, 1] -> latents in [-1, 1]."""
    return (2.0 * np.asarray(frames, dtype=np.float32) - 1.0).astype(np.float32)


def decode(latents: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(latents, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)
