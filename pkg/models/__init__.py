"""ReferenceNet, AnimateNet and the attention/motion layers they are built from."""
from .attention import (
    AttentionParams,
    ConditionStream,
    cross_attention,
    decoupled_cross_attention,
    init_attention,
    positional_encoding,
    scaled_dot_attention,
)
from .checkpoint import Checkpoint, config_digest, load_checkpoint, model_digest, save_checkpoint
from .control import ControlConditions, control_forward, init_control, inject, stream_weight_names, zero_conv
from .motion import (
    MotionBlockParams,
    from_spatial_batch,
    from_temporal_batch,
    init_motion_block,
    motion_block_forward,
    temporal_attention_weights,
    to_spatial_batch,
    to_temporal_batch,
)
from .network import has_control, init_model, model_param_count, predict_noise
from .params import Params, Scope
from .unet import (
    ConditionSet,
    UNetConfig,
    count_params,
    denoise_forward,
    init_denoiser,
    motion_param_names,
    timestep_embedding,
)

__all__ = [
    "AttentionParams",
    "Checkpoint",
    "ConditionSet",
    "ConditionStream",
    "ControlConditions",
    "MotionBlockParams",
    "Params",
    "Scope",
    "UNetConfig",
    "config_digest",
    "control_forward",
    "count_params",
    "cross_attention",
    "decoupled_cross_attention",
    "denoise_forward",
    "from_spatial_batch",
    "from_temporal_batch",
    "has_control",
    "init_attention",
    "init_control",
    "init_denoiser",
    "init_model",
    "init_motion_block",
    "inject",
    "load_checkpoint",
    "model_digest",
    "model_param_count",
    "motion_block_forward",
    "motion_param_names",
    "positional_encoding",
    "predict_noise",
    "save_checkpoint",
    "scaled_dot_attention",
    "stream_weight_names",
    "temporal_attention_weights",
    "timestep_embedding",
    "to_spatial_batch",
    "to_temporal_batch",
    "zero_conv",
]
