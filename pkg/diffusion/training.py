"""Noise-prediction training: one loss/gradient step and the resumable training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from tqdm import tqdm

from models import ConditionSet, ControlConditions, UNetConfig, motion_param_names, predict_noise, stream_weight_names
from numeric import AdamState, GradTape, Tensor, adam_step, mse_loss
from talk_core.errors import DimensionError, NumericFailure

from .schedule import NoiseSchedule, q_sample

logger = logging.getLogger(__name__)

Predictor = Callable[[Tensor, np.ndarray, Mapping[str, Tensor]], Tensor]


@dataclass(frozen=True)
class TrainingExample:
    """One clip: latents [c, N, h, w] and its conditions (batch of one)."""

    latents: np.ndarray
    conds: ConditionSet
    control: Optional[ControlConditions] = None


@dataclass(frozen=True)
class TrainingBatch:
    latents: np.ndarray
    conds: ConditionSet
    control: Optional[ControlConditions]

    @classmethod
    def collate(cls, examples: Sequence[TrainingExample]) -> "TrainingBatch":
        if not examples:
            raise DimensionError("cannot collate an empty batch")
        latents = np.stack([e.latents for e in examples]).astype(np.float32)
        conds = ConditionSet(
            np.concatenate([e.conds.identity for e in examples]),
            np.concatenate([e.conds.text_ids for e in examples]),
        )
        control = None
        if all(e.control is not None for e in examples):
            control = ControlConditions(
                np.concatenate([e.control.landmark_heatmaps for e in examples]),
                np.concatenate([e.control.contour_map for e in examples]),
            )
        return cls(latents, conds, control)


@dataclass
class StepResult:
    loss: float
    grads: Dict[str, np.ndarray]
    timesteps: np.ndarray


def _grad_norms(grads: Mapping[str, np.ndarray]) -> Dict[str, float]:
    return {name: float(np.linalg.norm(g)) for name, g in grads.items()}


def training_step(
    batch: TrainingBatch,
    params: Mapping[str, Tensor],
    trainable: Sequence[str],
    config: UNetConfig,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    predictor: Optional[Predictor] = None,
) -> StepResult:
    """
    Draw t uniformly per clip and ε ~ N(0, I), noise the batch, and return
    mse(ε, ε̂) over all frames jointly with gradients for ``trainable``.
    """
    b = batch.latents.shape[0]
    t = rng.integers(0, schedule.num_steps, size=b)
    eps = rng.standard_normal(batch.latents.shape).astype(np.float32)
    z_t = q_sample(batch.latents, t, eps, schedule).astype(np.float32)

    wanted = set(trainable)
    tracked = {n: (Tensor(p.data, requires_grad=True) if n in wanted else p) for n, p in params.items()}
    with GradTape() as tape:
        try:
            if predictor is None:
                pred = predict_noise(Tensor(z_t), t, batch.conds, batch.control, tracked, config, schedule.num_steps)
            else:
                pred = predictor(Tensor(z_t), t, tracked)
            loss = mse_loss(pred, Tensor(eps))
        except NumericFailure as exc:
            raise NumericFailure(
                "non-finite forward pass", {**exc.diagnostics, "t": t.tolist(), "z_t_max_abs": float(np.abs(z_t).max())}
            ) from exc
    grads = tape.gradient(loss, {n: tracked[n] for n in trainable if n in tracked})
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        norms = _grad_norms({n: np.nan_to_num(grads[n]) for n in bad[:5]})
        raise NumericFailure("non-finite gradients", {"t": t.tolist(), "params": bad[:5], "norms": norms})
    return StepResult(loss=loss.item(), grads=grads, timesteps=t)


class Trainer:
    """
    Adam training loop over a fixed example list.

    The batch selection and noise of step k come from ``default_rng([seed, k])``,
    so a run resumed from a checkpoint at step k continues bitwise.
    """

    def __init__(
        self,
        config: UNetConfig,
        schedule: NoiseSchedule,
        examples: Sequence[TrainingExample],
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        batch_size: int = 4,
        seed: int = 0,
        adam: Optional[AdamState] = None,
        freeze_motion: bool = False,
        use_control: bool = True,
    ) -> None:
        if not examples:
            raise DimensionError("training needs at least one example")
        self.config = config
        self.schedule = schedule
        self.examples = list(examples)
        self.params: Dict[str, Tensor] = dict(params)
        self.lr = lr
        self.batch_size = min(batch_size, len(self.examples))
        self.seed = seed
        self.adam = adam or AdamState()
        self.use_control = use_control
        frozen = set(motion_param_names(self.params)) if freeze_motion else set()
        self.trainable = [
            n for n in self.params
            if n not in frozen and (use_control or not n.startswith("control."))
        ]

    @property
    def step(self) -> int:
        return self.adam.step

    def stream_weights(self) -> Dict[str, float]:
        return {n: self.params[n].item() for n in stream_weight_names(self.params)}

    def batch_for(self, step: int) -> tuple[TrainingBatch, np.random.Generator]:
        rng = np.random.default_rng([self.seed, step])
        picks = rng.choice(len(self.examples), size=self.batch_size, replace=False)
        batch = TrainingBatch.collate([self.examples[i] for i in sorted(picks)])
        if not self.use_control:
            batch = TrainingBatch(batch.latents, batch.conds, None)
        return batch, rng

    def train_step(self) -> float:
        batch, rng = self.batch_for(self.step)
        result = training_step(batch, self.params, self.trainable, self.config, self.schedule, rng)
        self.params, self.adam = adam_step(self.params, result.grads, self.adam, self.lr)
        return result.loss

    def run(
        self,
        steps: int,
        loss_csv: Optional[Path] = None,
        progress: bool = True,
        on_step: Optional[Callable[["Trainer", float], None]] = None,
    ) -> List[float]:
        """Train until ``self.step == steps``; appends one CSV row per step."""
        losses: List[float] = []
        weight_names = stream_weight_names(self.params)
        writer = None
        handle = None
        if loss_csv is not None:
            loss_csv = Path(loss_csv)
            fresh = not loss_csv.exists() or self.step == 0
            handle = loss_csv.open("w" if fresh else "a", newline="", encoding="utf-8")
            writer = csv.writer(handle)
            if fresh:
                writer.writerow(["step", "loss", "lr"] + weight_names)
        try:
            bar = tqdm(total=steps, initial=self.step, disable=not progress, desc="train", unit="step")
            while self.step < steps:
                loss = self.train_step()
                losses.append(loss)
                bar.update(1)
                bar.set_postfix(loss=f"{loss:.4f}")
                if writer is not None:
                    weights = self.stream_weights()
                    writer.writerow([self.step, f"{loss:.8g}", self.lr] + [f"{weights[n]:.6g}" for n in weight_names])
                if on_step is not None:
                    on_step(self, loss)
            bar.close()
        finally:
            if handle is not None:
                handle.close()
        if losses:
            logger.info("trained to step %d, last loss %.5f", self.step, losses[-1])
        return losses
