import hashlib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class FileEntry(BaseModel):
    file: str = Field(description="Path relative to the manifest's directory")
    sha256: str = Field(description="SHA-256 of the file bytes")

    @classmethod
    def of(cls, path: Union[str, Path], root: Union[str, Path]) -> "FileEntry":
        path = Path(path)
        return cls(file=path.relative_to(root).as_posix(), sha256=file_digest(path))


class ClipEntry(FileEntry):
    index: int = Field(description="World index of the clip")
    tokens: List[str] = Field(default_factory=list, description="Attribute tokens of the clip's identity")
    signal_seed: int = Field(description="Seed of the clip's drive signal")


class DatasetManifest(BaseModel):
    kind: Literal["dataset"] = "dataset"
    config: Dict[str, Any] = Field(description="Full run config that generated the dataset")
    config_hash: str = Field(description="Hash of the run config")
    world_hash: str = Field(description="Hash of the world section only; training checks it")
    seed: int = Field(description="World seed")
    n_clips: int
    frames: int
    size: int
    clips: List[ClipEntry] = Field(default_factory=list)

    def dataset_hash(self) -> str:
        """Digest over the clip file digests in index order."""
        joined = "".join(c.sha256 for c in sorted(self.clips, key=lambda c: c.index))
        return hashlib.sha256(joined.encode("ascii")).hexdigest()[:16]


class RunManifest(BaseModel):
    kind: Literal["sample", "sample_long"] = Field(description="Command that produced the frames")
    config: Dict[str, Any] = Field(description="Full run config of the sampling run")
    config_hash: str
    seed: int = Field(description="Sampler seed")
    checkpoint: str = Field(description="Checkpoint path as given on the command line")
    checkpoint_sha256: str
    checkpoint_config_hash: str = Field(description="Run config hash stored in the checkpoint")
    identity: Dict[str, Any] = Field(description="Blob identity whose geometry drives the landmark heatmaps")
    tokens: List[str] = Field(default_factory=list)
    reference: Optional[str] = Field(default=None, description="Reference PNG, when one replaced the rendered reference")
    signal_seed: int
    signal_values: List[float]
    total_frames: int
    fusion: Optional[bool] = Field(default=None, description="Progressive fusion on/off (long-form only)")
    plan: Optional[Dict[str, Any]] = Field(default=None, description="Segment plan (long-form only)")
    files: List[FileEntry] = Field(default_factory=list)
    gif: Optional[str] = None

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path
