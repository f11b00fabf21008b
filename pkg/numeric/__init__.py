"""Numeric core: immutable tensors, a gradient tape and the ops a small video UNet needs."""
from .tensor import (
    GradTape,
    Tensor,
    as_tensor,
    debug_enabled,
    debug_mode,
    precision,
    set_debug,
    working_dtype,
)
from .ops import (
    add,
    concat,
    matmul,
    mean,
    mul,
    permute,
    repeat_batch,
    reshape,
    scale,
    softmax_lastaxis,
    sub,
    take_rows,
)
from .nn import avg_pool2d, conv2d, group_norm, layer_norm, linear, mse_loss, silu, upsample_nearest2d
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "GradTape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "avg_pool2d",
    "concat",
    "conv2d",
    "debug_enabled",
    "debug_mode",
    "group_norm",
    "layer_norm",
    "linear",
    "matmul",
    "mean",
    "mse_loss",
    "mul",
    "permute",
    "precision",
    "repeat_batch",
    "reshape",
    "scale",
    "set_debug",
    "silu",
    "softmax_lastaxis",
    "sub",
    "take_rows",
    "upsample_nearest2d",
    "working_dtype",
]
