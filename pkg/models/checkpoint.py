"""Checkpoint bundles: model config, parameters and Adam state in one MTKB file."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
from pydantic import ValidationError

from numeric import AdamState, Tensor
from numeric.container import load_bundle, save_bundle
from talk_core.errors import CheckpointError

from .control import count_control_params
from .network import has_control
from .params import Params, count
from .unet import UNetConfig, count_params

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "blob-talk-checkpoint"
_ADAM_M = "adam.m."
_ADAM_V = "adam.v."


def config_digest(payload: Mapping[str, Any]) -> str:
    """First 16 hex chars of SHA-256 over canonical (sorted-key) JSON."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def model_digest(config: UNetConfig) -> str:
    return config_digest(config.model_dump(mode="json"))


@dataclass
class Checkpoint:
    config: UNetConfig
    params: Params
    adam: AdamState
    header: Dict[str, Any] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return self.adam.step

    @property
    def config_hash(self) -> str:
        return self.header.get("config_hash", "")

    @property
    def seed(self) -> int:
        return int(self.header.get("seed", 0))


def expected_param_count(config: UNetConfig, params: Mapping[str, Tensor]) -> int:
    return count_params(config) + (count_control_params(config) if has_control(params) else 0)


def save_checkpoint(
    path: Union[str, Path],
    config: UNetConfig,
    params: Mapping[str, Tensor],
    config_hash: str,
    seed: int,
    adam: Optional[AdamState] = None,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    adam = adam or AdamState()
    path = Path(path)
    header = {
        "kind": CHECKPOINT_KIND,
        "unet": config.model_dump(mode="json"),
        "model_hash": model_digest(config),
        "config_hash": config_hash,
        "param_count": count(params),
        "seed": int(seed),
        "step": int(adam.step),
        "extra": dict(extra or {}),
    }
    tensors: Dict[str, np.ndarray] = {name: t.data for name, t in params.items()}
    for name in params:
        if name in adam.m:
            tensors[_ADAM_M + name] = adam.m[name]
            tensors[_ADAM_V + name] = adam.v[name]
    save_bundle(path, header, tensors)
    logger.info("checkpoint written to %s (step %d, %d parameters)", path, adam.step, header["param_count"])
    return path


def load_checkpoint(
    path: Union[str, Path],
    expected_model_hash: Optional[str] = None,
    expected_config_hash: Optional[str] = None,
) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    header, tensors = load_bundle(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a model checkpoint")
    try:
        config = UNetConfig.model_validate(header["unet"])
    except (KeyError, ValidationError) as exc:
        raise CheckpointError(f"{path} carries an invalid model config: {exc}") from exc

    if header.get("model_hash") != model_digest(config):
        raise CheckpointError(f"{path}: stored model hash does not match its config")
    if expected_model_hash is not None and header["model_hash"] != expected_model_hash:
        raise CheckpointError(
            f"{path}: model config hash {header['model_hash']} does not match requested {expected_model_hash}"
        )
    if expected_config_hash is not None and header.get("config_hash") != expected_config_hash:
        raise CheckpointError(
            f"{path}: run config hash {header.get('config_hash')} does not match requested {expected_config_hash}"
        )

    params = {n: Tensor(a) for n, a in tensors.items() if not n.startswith((_ADAM_M, _ADAM_V))}
    actual = count(params)
    expected = expected_param_count(config, params)
    if actual != expected or actual != header.get("param_count"):
        raise CheckpointError(
            f"{path}: parameter count {actual} (header {header.get('param_count')}, config {expected})"
        )
    adam = AdamState(
        step=int(header.get("step", 0)),
        m={n[len(_ADAM_M):]: a for n, a in tensors.items() if n.startswith(_ADAM_M)},
        v={n[len(_ADAM_V):]: a for n, a in tensors.items() if n.startswith(_ADAM_V)},
    )
    return Checkpoint(config=config, params=params, adam=adam, header=header)
