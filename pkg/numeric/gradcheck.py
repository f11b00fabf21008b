"""Central finite-difference audit of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import GradTape, Tensor, precision


@dataclass
class GradCheckResult:
    relative_error: float
    per_input: dict[str, float] = field(default_factory=dict)
    analytic: dict[str, np.ndarray] = field(default_factory=dict)
    numeric: dict[str, np.ndarray] = field(default_factory=dict)

    def passed(self, tolerance: float) -> bool:
        return self.relative_error < tolerance


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    step: float = 1e-3,
    sample: Optional[int] = None,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare tape gradients of ``fn`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. ``sample`` limits the audit to that many
    randomly chosen scalar entries across all inputs (the analytic gradient is
    still computed in full). Runs in float64 so the tolerance measures the
    gradient formulas, not float32 rounding.
    """
    rng = np.random.default_rng(seed)
    with precision("float64"):
        base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
        tracked = {k: Tensor(v, requires_grad=True) for k, v in base.items()}
        with GradTape() as tape:
            out = fn(tracked)
        projection = rng.standard_normal(out.shape) if out.ndim else None
        analytic = tape.gradient(out, tracked, output_grad=projection)

        def objective(arrays: Mapping[str, np.ndarray]) -> float:
            value = fn({k: Tensor(v) for k, v in arrays.items()}).data
            return float(value if projection is None else np.sum(value * projection))

        entries = [(k, idx) for k, v in base.items() for idx in np.ndindex(v.shape)]
        if sample is not None and sample < len(entries):
            picks = rng.choice(len(entries), size=sample, replace=False)
            entries = [entries[i] for i in sorted(picks)]

        numeric = {k: np.full(v.shape, np.nan) for k, v in base.items()}
        for name, idx in entries:
            shifted = {k: v.copy() for k, v in base.items()}
            shifted[name][idx] = base[name][idx] + step
            upper = objective(shifted)
            shifted[name][idx] = base[name][idx] - step
            lower = objective(shifted)
            numeric[name][idx] = (upper - lower) / (2.0 * step)

    per_input = {}
    all_a, all_n = [], []
    for name in base:
        mask = ~np.isnan(numeric[name])
        if not mask.any():
            continue
        a, n = analytic[name][mask], numeric[name][mask]
        per_input[name] = _relative(a, n)
        all_a.append(a)
        all_n.append(n)
    overall = _relative(np.concatenate(all_a), np.concatenate(all_n)) if all_a else 0.0
    return GradCheckResult(relative_error=overall, per_input=per_input, analytic=analytic, numeric=numeric)
