from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from talk_core.errors import DimensionError

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, Tensor], AdamState]:
    """
    One bias-corrected Adam update.

    Only parameters named in ``grads`` move; the rest are passed through
    unchanged. Returns fresh parameter tensors and a fresh state.
    """
    step = state.step + 1
    m_next = dict(state.m)
    v_next = dict(state.v)
    updated = dict(params)
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step

    for name, grad in grads.items():
        param = params[name]
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise DimensionError(f"gradient for {name} has shape {grad.shape}, parameter {param.shape}")
        # moments are kept in the parameter dtype so checkpoints resume bitwise
        m = (beta1 * state.m.get(name, np.zeros_like(grad)) + (1.0 - beta1) * grad).astype(param.data.dtype)
        v = (beta2 * state.v.get(name, np.zeros_like(grad)) + (1.0 - beta2) * grad * grad).astype(param.data.dtype)
        update = lr * (m / correction1) / (np.sqrt(v.astype(np.float64) / correction2) + eps)
        m_next[name], v_next[name] = m, v
        updated[name] = Tensor._wrap(param.data - update, requires_grad=False, op="adam")

    return updated, AdamState(step=step, m=m_next, v=v_next)
