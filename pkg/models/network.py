"""The full noise predictor: ReferenceNet plus the optional AnimateNet control branch."""
from __future__ import annotations

from typing import Mapping, Optional

from numeric import Tensor

from .control import ControlConditions, control_forward, count_control_params, init_control
from .params import Params
from .unet import ConditionSet, Timesteps, UNetConfig, count_params, denoise_forward, init_denoiser


def init_model(config: UNetConfig, seed: int = 0) -> Params:
    """Denoiser weights from ``seed``; control weights from ``seed + 1`` with the encoder cloned."""
    params = init_denoiser(config, seed)
    params.update(init_control(config, seed + 1, base=params))
    return params


def model_param_count(config: UNetConfig) -> int:
    return count_params(config) + count_control_params(config)


def has_control(params: Mapping[str, Tensor]) -> bool:
    return any(name.startswith("control.") for name in params)


def predict_noise(
    z: object,
    t: Timesteps,
    conds: ConditionSet,
    control: Optional[ControlConditions],
    params: Mapping[str, Tensor],
    config: UNetConfig,
    num_steps: Optional[int] = None,
) -> Tensor:
    residuals = None
    if control is not None and has_control(params):
        residuals = control_forward(z, t, control, params, config, num_steps)
    return denoise_forward(z, t, conds, params, config, residuals=residuals, num_steps=num_steps)
