"""
Run configuration: every knob of data generation, training, sampling and
evaluation in one serializable object whose hash is stamped on each artifact.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from diffusion import NoiseSchedule, SamplerConfig, make_schedule
from models import UNetConfig, config_digest
from numeric import set_debug
from tools.world_tool import TEXT_TOKENS, VOCABULARY

from .errors import ConfigurationError

load_dotenv()

DEFAULT_CONFIG_FILE = "blob_talk.toml"
ABLATION_FLAGS = ("unified_attention", "no_face_encoder", "no_contour", "no_motion", "no_fusion", "no_landmark")
# Cells of the default ablation matrix; no_landmark is available but not part of it.
DEFAULT_ABLATION_MATRIX = ("full", "unified_attention", "no_face_encoder", "no_contour", "no_motion", "no_fusion")
FAST_NUM_STEPS = 200
FAST_SAMPLE_STEPS = 20


class WorldSettings(BaseModel):
    size: int = Field(default=16, ge=8, description="Frame height and width in pixels")
    n_clips: int = Field(default=64, ge=1, description="Training clips in the dataset")
    frames: int = Field(default=8, ge=1, description="Frames per training clip")
    seed: int = Field(default=0, description="Dataset seed; clip i is built from [seed, i]")


class DiffusionSettings(BaseModel):
    num_steps: int = Field(default=1000, ge=1, description="Diffusion timesteps T")
    beta_start: float = Field(default=1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(default=0.02, gt=0.0, lt=1.0)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)


class FusionSettings(BaseModel):
    segment_length: int = Field(default=16, ge=2, description="Frames per denoising window (N_seg)")
    overlap: int = Field(default=8, ge=1, description="Frames shared by consecutive windows (C)")
    fusion_every: int = Field(default=1, ge=1, description="Fuse on every k-th step and always on the last")
    enabled: bool = Field(default=True, description="Progressive fusion on/off")

    @model_validator(mode="after")
    def _check_overlap(self) -> "FusionSettings":
        if self.overlap >= self.segment_length:
            raise ConfigurationError(
                f"overlap {self.overlap} must be smaller than the segment length {self.segment_length}"
            )
        return self


class TrainSettings(BaseModel):
    steps: int = Field(default=2000, ge=0, description="Optimizer steps")
    lr: float = Field(default=1e-3, gt=0.0, description="Adam learning rate")
    batch_size: int = Field(default=4, ge=1, description="Clips per step")
    seed: int = Field(default=0, description="Weight init and per-step noise seed")
    checkpoint_every: int = Field(default=0, ge=0, description="Intermediate checkpoint cadence (0 = only at the end)")


class AblationSettings(BaseModel):
    unified_attention: bool = Field(default=False, description="One key/value stream for identity and text")
    no_face_encoder: bool = Field(default=False, description="Mean-pixel identity embedding instead of the encoder")
    no_contour: bool = Field(default=False, description="Blank contour maps")
    no_motion: bool = Field(default=False, description="Motion blocks frozen at their zero init")
    no_fusion: bool = Field(default=False, description="Long clips concatenate independent segments")
    no_landmark: bool = Field(default=False, description="Blank landmark heatmaps")

    def active(self) -> List[str]:
        return [name for name in ABLATION_FLAGS if getattr(self, name)]

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "AblationSettings":
        names = [n.strip() for n in names if n.strip() and n.strip() != "full"]
        unknown = sorted(set(names) - set(ABLATION_FLAGS))
        if unknown:
            raise ConfigurationError(f"unknown ablation flags {unknown}; choose from {list(ABLATION_FLAGS)}")
        return cls(**{n: True for n in names})


class EvalSettings(BaseModel):
    held_out: int = Field(default=8, ge=1, description="Held-out clips generated past the training indices")
    ssim_window: int = Field(default=8, ge=2, description="SSIM tile size")
    long_frames: int = Field(default=48, ge=0, description="Frames of the long-form seam measurement (0 = skip)")


class RunConfig(BaseSettings):
    world: WorldSettings = Field(default_factory=WorldSettings)
    unet: UNetConfig = Field(default_factory=UNetConfig)
    diffusion: DiffusionSettings = Field(default_factory=DiffusionSettings)
    fusion: FusionSettings = Field(default_factory=FusionSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)
    ablation: AblationSettings = Field(default_factory=AblationSettings)
    eval: EvalSettings = Field(default_factory=EvalSettings)
    fast: bool = Field(default=False, description=f"CI schedule: T={FAST_NUM_STEPS}, {FAST_SAMPLE_STEPS} sampling steps")
    debug: bool = Field(default=False, description="Per-op finiteness checks in the numeric core")

    model_config = SettingsConfigDict(
        env_prefix="BLOBTALK_",
        env_nested_delimiter="__",
        env_file=".env",
        toml_file=DEFAULT_CONFIG_FILE,
        extra="forbid",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, env_settings, dotenv_settings, TomlConfigSettingsSource(settings_cls)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.world.size != self.unet.height or self.world.size != self.unet.width:
            raise ConfigurationError(
                f"world frames are {self.world.size}px but the latent is {self.unet.height}x{self.unet.width}"
            )
        if self.world.frames != self.unet.frames:
            raise ConfigurationError(f"world clips have {self.world.frames} frames, unet expects {self.unet.frames}")
        if self.unet.vocab_size < len(VOCABULARY) or self.unet.text_tokens < TEXT_TOKENS:
            raise ConfigurationError(
                f"text table needs >= {len(VOCABULARY)} rows and >= {TEXT_TOKENS} tokens per prompt"
            )
        if self.fusion.segment_length > self.unet.max_frames:
            raise ConfigurationError(
                f"segment length {self.fusion.segment_length} exceeds max_frames={self.unet.max_frames}"
            )
        if self.ablation.unified_attention and self.unet.id_dim != self.unet.text_dim:
            raise ConfigurationError("the unified_attention ablation needs unet.id_dim == unet.text_dim")
        return self

    def config_hash(self) -> str:
        """First 16 hex chars of SHA-256 over the canonical JSON dump; ``debug`` does not change results."""
        return config_digest(self.model_dump(mode="json", exclude={"debug"}))

    def world_hash(self) -> str:
        return config_digest(self.world.model_dump(mode="json"))

    def effective_unet(self) -> UNetConfig:
        """The denoiser config with ablation switches applied; rebuilt so its validators run again."""
        if self.ablation.unified_attention and not self.unet.unified_attention:
            try:
                return UNetConfig.model_validate({**self.unet.model_dump(), "unified_attention": True})
            except ValidationError as exc:
                raise ConfigurationError(f"unified attention does not fit this unet: {exc}") from exc
        return self.unet

    def schedule(self) -> NoiseSchedule:
        num_steps = FAST_NUM_STEPS if self.fast else self.diffusion.num_steps
        return make_schedule(num_steps, self.diffusion.beta_start, self.diffusion.beta_end)

    def sampler(self, seed: Optional[int] = None) -> SamplerConfig:
        sampler = self.diffusion.sampler
        update: Dict[str, Any] = {}
        if self.fast:
            update["sample_steps"] = min(FAST_SAMPLE_STEPS, sampler.sample_steps)
        if seed is not None:
            update["seed"] = seed
        return sampler.model_copy(update=update) if update else sampler

    def fusion_on(self) -> bool:
        return self.fusion.enabled and not self.ablation.no_fusion

    def with_ablation(self, names: Sequence[str]) -> "RunConfig":
        """Copy of this config with exactly the named ablation flags set."""
        payload = self.model_dump(mode="json")
        payload["ablation"] = AblationSettings.from_names(names).model_dump()
        return build_config(payload)

    def with_seed(self, seed: int) -> "RunConfig":
        payload = self.model_dump(mode="json")
        payload["world"]["seed"] = seed
        payload["train"]["seed"] = seed
        payload["diffusion"]["sampler"]["seed"] = seed
        return build_config(payload)

    def apply_runtime(self) -> None:
        set_debug(self.debug)


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_config(values: Dict[str, Any]) -> RunConfig:
    """Validate explicit values; pydantic validation errors surface as ConfigurationError."""
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def flatten(payload: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def config_diff(base: RunConfig, other: RunConfig) -> Dict[str, Tuple[Any, Any]]:
    """Dotted keys whose values differ, mapped to (base value, other value)."""
    a = flatten(base.model_dump(mode="json"))
    b = flatten(other.model_dump(mode="json"))
    return {k: (a.get(k), b.get(k)) for k in sorted(set(a) | set(b)) if a.get(k) != b.get(k)}


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build the run config.

    Args:
        path: optional TOML file; its values (and ``overrides`` on top) rank
            above environment variables, ``.env`` and ./blob_talk.toml
        overrides: nested dict of explicit values, e.g. {"train": {"steps": 10}}
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} does not exist")
        try:
            values = TomlConfigSettingsSource(RunConfig, toml_file=path)()
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    if overrides:
        values = _deep_merge(values, overrides)
    return build_config(values)
