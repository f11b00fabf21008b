import copy
from typing import Any, Dict

import numpy as np
import pytest

from models import ConditionSet, ControlConditions, UNetConfig, init_model
from talk_core.settings import RunConfig, load_config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> UNetConfig:
    return UNetConfig(
        height=8,
        width=8,
        frames=2,
        base_channels=8,
        channel_mult=(1, 2),
        attn_dim=8,
        heads=1,
        norm_groups=4,
        id_dim=8,
        text_dim=8,
        text_tokens=4,
        vocab_size=16,
        cond_dim=8,
        cond_grid=4,
        max_frames=16,
    )


@pytest.fixture
def tiny_params(tiny_config: UNetConfig) -> Dict[str, Any]:
    return init_model(tiny_config, seed=0)


@pytest.fixture
def tiny_conds(tiny_config: UNetConfig, rng: np.random.Generator) -> ConditionSet:
    return ConditionSet(
        rng.standard_normal((1, tiny_config.id_dim)).astype(np.float32),
        np.array([[1, 7, 9, 0]], dtype=np.int64),
    )


@pytest.fixture
def tiny_control(tiny_config: UNetConfig, rng: np.random.Generator) -> ControlConditions:
    h, w = tiny_config.height, tiny_config.width
    heatmaps = rng.uniform(0.0, 1.0, size=(1, tiny_config.frames, 1, h, w))
    contour = (rng.uniform(0.0, 1.0, size=(1, 1, h, w)) > 0.7).astype(np.float32)
    return ControlConditions(heatmaps, contour)


# 16px world with a tiny UNet and a short schedule, for pipeline runs.
TINY_RUN_OVERRIDES: Dict[str, Any] = {
    "world": {"size": 16, "n_clips": 3, "frames": 2, "seed": 5},
    "unet": {
        "height": 16,
        "width": 16,
        "frames": 2,
        "base_channels": 8,
        "channel_mult": [1, 2],
        "attn_dim": 8,
        "norm_groups": 4,
        "id_dim": 8,
        "text_dim": 8,
        "cond_dim": 8,
        "cond_grid": 4,
        "max_frames": 16,
    },
    "diffusion": {"num_steps": 20, "sampler": {"sample_steps": 3, "seed": 2}},
    "fusion": {"segment_length": 4, "overlap": 2},
    "train": {"steps": 2, "batch_size": 2, "seed": 3},
    "eval": {"held_out": 1, "long_frames": 6},
}


@pytest.fixture(scope="session")
def tiny_run_config() -> RunConfig:
    return load_config(None, copy.deepcopy(TINY_RUN_OVERRIDES))
