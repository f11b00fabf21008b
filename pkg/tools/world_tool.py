"""
Synthetic "talking blob" world: identities, drive signals, rendered clips and
the conditioning tensors derived from them (landmark heatmaps, contours,
identity embeddings, attribute tokens).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from numeric.container import load_bundle, save_bundle
from talk_core.errors import CheckpointError, ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

FRAME_SIZE = 16
SUPERSAMPLE = 8
PAD_TOKEN = "<pad>"
TEXT_TOKENS = 4
IDENTITY_DIM = 64
IDENTITY_SEED = 1103

PALETTE: Dict[str, Tuple[float, float, float]] = {
    "red": (1.0, 0.2, 0.2),
    "green": (0.2, 0.9, 0.2),
    "blue": (0.3, 0.4, 1.0),
    "yellow": (1.0, 0.9, 0.2),
    "purple": (0.7, 0.3, 0.9),
    "cyan": (0.2, 0.9, 0.9),
}
SIZES: Dict[str, float] = {"small": 5.0, "large": 6.0}
EXPRESSIONS = ("neutral", "smiling")
VOCABULARY: Tuple[str, ...] = (PAD_TOKEN,) + tuple(PALETTE) + tuple(SIZES) + EXPRESSIONS

MOUTH_COLOR = (0.05, 0.02, 0.02)
EYE_COLOR = (0.05, 0.05, 0.08)
EYE_RADIUS = 0.5
LUMA = np.array([0.299, 0.587, 0.114])
CONTOUR_THRESHOLD = 0.2
HEATMAP_SIGMA = 1.5


def luminance(rgb: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """Grayscale over the leading channel axis."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return np.tensordot(LUMA, rgb, axes=([0], [0]))


@dataclass(frozen=True)
class BlobIdentity:
    color: Tuple[float, float, float]
    radius: float
    center: Tuple[float, float]
    eye_offset: float
    color_name: str = ""
    size_name: str = ""
    expression: str = "neutral"

    @property
    def smile(self) -> float:
        """Upward shift of the mouth corners in pixels."""
        return 0.15 * self.radius if self.expression == "smiling" else 0.0

    @property
    def mouth_center(self) -> Tuple[float, float]:
        cx, cy = self.center
        return cx, cy + 0.45 * self.radius

    @property
    def mouth_half_width(self) -> float:
        return 0.5 * self.radius

    def mouth_half_height(self, aperture: float) -> float:
        return aperture * self.radius / 4.0

    @property
    def eyes(self) -> List[Tuple[float, float]]:
        cx, cy = self.center
        return [(cx - self.eye_offset, cy - 0.3 * self.radius), (cx + self.eye_offset, cy - 0.3 * self.radius)]

    @property
    def mouth_keypoint(self) -> Tuple[float, float]:
        """Centroid of the open mouth; the smile bend lifts it by a quarter of the corner shift."""
        mx, my = self.mouth_center
        return mx, my - 0.25 * self.smile

    @property
    def attribute_tokens(self) -> List[str]:
        return [t for t in (self.color_name, self.size_name, self.expression) if t]

    def check_fits(self, size: int = FRAME_SIZE) -> None:
        cx, cy = self.center
        r = self.radius
        if cx - r < 0 or cy - r < 0 or cx + r > size or cy + r > size:
            raise ConfigurationError(f"blob at {self.center} with radius {r} leaves the {size}x{size} frame")

    def to_dict(self) -> dict:
        return {
            "color": list(self.color),
            "radius": self.radius,
            "center": list(self.center),
            "eye_offset": self.eye_offset,
            "color_name": self.color_name,
            "size_name": self.size_name,
            "expression": self.expression,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "BlobIdentity":
        return cls(
            color=tuple(payload["color"]),
            radius=float(payload["radius"]),
            center=tuple(payload["center"]),
            eye_offset=float(payload["eye_offset"]),
            color_name=payload.get("color_name", ""),
            size_name=payload.get("size_name", ""),
            expression=payload.get("expression", "neutral"),
        )

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], center: Tuple[float, float] = (7.5, 7.5)) -> "BlobIdentity":
        """Identity described by prompt tokens; missing attributes fall back to red / small / neutral."""
        color_name = next((t for t in tokens if t in PALETTE), "red")
        size_name = next((t for t in tokens if t in SIZES), "small")
        expression = "smiling" if "smiling" in tokens else "neutral"
        radius = SIZES[size_name]
        return cls(PALETTE[color_name], radius, center, 0.35 * radius, color_name, size_name, expression)


def random_identity(rng: np.random.Generator) -> BlobIdentity:
    color_name = str(rng.choice(list(PALETTE)))
    size_name = str(rng.choice(list(SIZES)))
    expression = str(rng.choice(EXPRESSIONS))
    jitter = rng.uniform(-1.0, 1.0, size=2)
    radius = SIZES[size_name]
    return BlobIdentity(
        color=PALETTE[color_name],
        radius=radius,
        center=(7.5 + float(jitter[0]), 7.5 + float(jitter[1])),
        eye_offset=0.35 * radius,
        color_name=color_name,
        size_name=size_name,
        expression=expression,
    )


@dataclass(frozen=True)
class DriveSignal:
    values: Tuple[float, ...]
    seed: int

    @property
    def length(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def make_drive_signal(seed: int, length: int) -> DriveSignal:
    """Mean-reverting random walk in [0, 1] whose per-frame step never exceeds 0.3."""
    if length < 1:
        raise ConfigurationError(f"drive signal needs at least one frame, got {length}")
    rng = np.random.default_rng(seed)
    value = float(rng.uniform(0.2, 0.8))
    velocity = 0.0
    values = [value]
    for _ in range(length - 1):
        velocity = 0.6 * velocity + 0.25 * (0.5 - value) + float(rng.normal(0.0, 0.1))
        velocity = float(np.clip(velocity, -0.3, 0.3))
        value = float(np.clip(value + velocity, 0.0, 1.0))
        values.append(value)
    return DriveSignal(tuple(values), seed)


@lru_cache(maxsize=8)
def _subpixel_grid(size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sample coordinates [size, size, S, S] for supersampled coverage."""
    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    coords = np.arange(size)[:, None] + offsets[None, :]
    ys = np.broadcast_to(coords[:, None, :, None], (size, size, SUPERSAMPLE, SUPERSAMPLE))
    xs = np.broadcast_to(coords[None, :, None, :], (size, size, SUPERSAMPLE, SUPERSAMPLE))
    return xs, ys


def disc_coverage(center: Tuple[float, float], radius: float, size: int = FRAME_SIZE) -> np.ndarray:
    xs, ys = _subpixel_grid(size)
    inside = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius * radius
    return inside.mean(axis=(2, 3))


def mouth_coverage(identity: BlobIdentity, aperture: float, size: int = FRAME_SIZE) -> np.ndarray:
    half_h = identity.mouth_half_height(aperture)
    if half_h <= 0.0:
        return np.zeros((size, size))
    xs, ys = _subpixel_grid(size)
    mx, my = identity.mouth_center
    u = (xs - mx) / identity.mouth_half_width
    lift = identity.smile * u * u
    inside = u * u + ((ys - my + lift) / half_h) ** 2 <= 1.0
    return inside.mean(axis=(2, 3))


def _blend(frame: np.ndarray, coverage: np.ndarray, color: Sequence[float]) -> np.ndarray:
    color = np.asarray(color, dtype=np.float64)[:, None, None]
    return frame * (1.0 - coverage) + coverage * color


def render_frame(identity: BlobIdentity, aperture: float, size: int = FRAME_SIZE) -> np.ndarray:
    """One [3, size, size] frame: blob on black, dark mouth ellipse, two eye dots."""
    if not 0.0 <= aperture <= 1.0:
        raise ConfigurationError(f"aperture must lie in [0, 1], got {aperture}")
    identity.check_fits(size)
    frame = np.zeros((3, size, size))
    frame = _blend(frame, disc_coverage(identity.center, identity.radius, size), identity.color)
    for eye in identity.eyes:
        frame = _blend(frame, disc_coverage(eye, EYE_RADIUS, size), EYE_COLOR)
    frame = _blend(frame, mouth_coverage(identity, aperture, size), MOUTH_COLOR)
    return frame.astype(np.float32)


@dataclass(frozen=True)
class SceneClip:
    frames: np.ndarray
    identity: BlobIdentity
    signal: DriveSignal
    attribute_tokens: List[str] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]


def render_clip(identity: BlobIdentity, signal: DriveSignal, size: int = FRAME_SIZE) -> SceneClip:
    """Frames [3, N, h, w]; a pure function of (identity, signal)."""
    frames = np.stack([render_frame(identity, v, size) for v in signal.values], axis=1)
    return SceneClip(frames=frames, identity=identity, signal=signal, attribute_tokens=identity.attribute_tokens)


def landmark_heatmap(value: float, identity: BlobIdentity, size: int = FRAME_SIZE) -> np.ndarray:
    """Gaussian bump of amplitude ``value`` at the mouth keypoint, [1, h, w]."""
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"heatmap value must lie in [0, 1], got {value}")
    mx, my = identity.mouth_keypoint
    centers = np.arange(size) + 0.5
    dist2 = (centers[None, :] - mx) ** 2 + (centers[:, None] - my) ** 2
    heat = value * np.exp(-dist2 / (2.0 * HEATMAP_SIGMA ** 2))
    return heat[None].astype(np.float32)


def landmark_heatmaps(signal: Union[DriveSignal, Sequence[float]], identity: BlobIdentity, size: int = FRAME_SIZE) -> np.ndarray:
    values = signal.values if isinstance(signal, DriveSignal) else signal
    return np.stack([landmark_heatmap(float(v), identity, size) for v in values])


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    padded = np.pad(np.asarray(gray, dtype=np.float64), 1, mode="edge")
    windows = sliding_window_view(padded, (3, 3))
    gx = np.einsum("ijkl,kl->ij", windows, _SOBEL_X)
    gy = np.einsum("ijkl,kl->ij", windows, _SOBEL_X.T)
    return np.sqrt(gx * gx + gy * gy)


def _fill_holes(mask: np.ndarray) -> np.ndarray:
    """Mask plus every region the frame border cannot reach through 4-connected background."""
    outside = np.zeros_like(mask)
    outside[[0, -1], :] = ~mask[[0, -1], :]
    outside[:, [0, -1]] = ~mask[:, [0, -1]]
    while True:
        grown = outside.copy()
        grown[1:] |= outside[:-1]
        grown[:-1] |= outside[1:]
        grown[:, 1:] |= outside[:, :-1]
        grown[:, :-1] |= outside[:, 1:]
        grown &= ~mask
        if np.array_equal(grown, outside):
            return ~outside
        outside = grown


def silhouette(frame: np.ndarray) -> np.ndarray:
    """Pixels brighter than half the frame's peak luminance, with interior holes (eyes, mouth) filled."""
    gray = luminance(frame)
    peak = gray.max()
    if peak <= 0.0:
        return np.zeros(gray.shape, dtype=bool)
    return _fill_holes(gray > 0.5 * peak)


def extract_contour(frame: np.ndarray, threshold: float = CONTOUR_THRESHOLD) -> np.ndarray:
    """Binary [1, h, w] one-pixel outline of the blob silhouette in a [3, h, w] frame."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DimensionError(f"contour extraction needs a [3, h, w] frame, got {frame.shape}")
    mask = silhouette(frame)
    edges = (sobel_magnitude(mask.astype(np.float64)) > threshold) & mask
    return edges[None].astype(np.float32)


@lru_cache(maxsize=4)
def _identity_projection(size: int, dim: int) -> np.ndarray:
    fan_in = 3 * size * size
    rng = np.random.default_rng(IDENTITY_SEED)
    projection = rng.standard_normal((fan_in, dim)) / np.sqrt(fan_in)
    projection.setflags(write=False)
    return projection


def encode_identity(reference_frame: np.ndarray, size: int = FRAME_SIZE, dim: int = IDENTITY_DIM) -> np.ndarray:
    """Frozen random linear projection of the flattened reference frame."""
    reference_frame = np.asarray(reference_frame, dtype=np.float64)
    if reference_frame.shape != (3, size, size):
        raise DimensionError(f"reference frame must be (3, {size}, {size}), got {reference_frame.shape}")
    return (reference_frame.reshape(-1) @ _identity_projection(size, dim)).astype(np.float32)


def mean_color_embedding(reference_frame: np.ndarray, dim: int = IDENTITY_DIM) -> np.ndarray:
    """Generic image summary: the mean pixel colour tiled to the identity width."""
    mean = np.asarray(reference_frame, dtype=np.float64).reshape(3, -1).mean(axis=1)
    return np.resize(mean, dim).astype(np.float32)


def token_ids(tokens: Sequence[str], length: int = TEXT_TOKENS) -> np.ndarray:
    unknown = [t for t in tokens if t not in VOCABULARY]
    if unknown:
        raise ConfigurationError(f"tokens {unknown} are not in the vocabulary {VOCABULARY}")
    if len(tokens) > length:
        raise ConfigurationError(f"at most {length} prompt tokens, got {len(tokens)}")
    padded = list(tokens) + [PAD_TOKEN] * (length - len(tokens))
    return np.array([VOCABULARY.index(t) for t in padded], dtype=np.int64)


@dataclass(frozen=True)
class ClipRecord:
    """A rendered clip plus every conditioning tensor derived from it."""

    clip: SceneClip
    heatmaps: np.ndarray
    contour: np.ndarray
    identity_embedding: np.ndarray
    text_ids: np.ndarray

    @classmethod
    def from_clip(cls, clip: SceneClip) -> "ClipRecord":
        size = clip.frames.shape[-1]
        reference = clip.frames[:, 0]
        return cls(
            clip=clip,
            heatmaps=landmark_heatmaps(clip.signal, clip.identity, size),
            contour=extract_contour(reference),
            identity_embedding=encode_identity(reference, size),
            text_ids=token_ids(clip.attribute_tokens),
        )

    def save(self, path: Union[str, Path]) -> None:
        header = {
            "identity": self.clip.identity.to_dict(),
            "signal": {"seed": self.clip.signal.seed, "values": list(self.clip.signal.values)},
            "attribute_tokens": self.clip.attribute_tokens,
            "text_ids": self.text_ids.tolist(),
        }
        save_bundle(
            path,
            header,
            {
                "frames": self.clip.frames,
                "heatmaps": self.heatmaps,
                "contour": self.contour,
                "identity_embedding": self.identity_embedding,
            },
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ClipRecord":
        header, tensors = load_bundle(path)
        missing = {"frames", "heatmaps", "contour", "identity_embedding"} - set(tensors)
        if missing:
            raise CheckpointError(f"{path} is missing tensors {sorted(missing)}")
        signal = DriveSignal(tuple(header["signal"]["values"]), int(header["signal"]["seed"]))
        clip = SceneClip(
            frames=tensors["frames"],
            identity=BlobIdentity.from_dict(header["identity"]),
            signal=signal,
            attribute_tokens=list(header["attribute_tokens"]),
        )
        return cls(
            clip=clip,
            heatmaps=tensors["heatmaps"],
            contour=tensors["contour"],
            identity_embedding=tensors["identity_embedding"],
            text_ids=np.asarray(header["text_ids"], dtype=np.int64),
        )


def clip_seed(seed: int, index: int) -> int:
    """Seed of clip ``index`` of a dataset built from ``seed``."""
    return int(np.random.default_rng([seed, index]).integers(0, 2**31 - 1))


class SyntheticWorld:
    """Deterministic dataset builder for the blob world."""

    def __init__(self, size: int = FRAME_SIZE):
        """
        Args:
            size: frame height and width in pixels
        """
        self.size = size

    def make_clip(self, seed: int, frames: int) -> ClipRecord:
        rng = np.random.default_rng(seed)
        identity = random_identity(rng)
        signal = make_drive_signal(int(rng.integers(0, 2**31 - 1)), frames)
        return ClipRecord.from_clip(render_clip(identity, signal, self.size))

    def clip_at(self, seed: int, index: int, frames: int) -> ClipRecord:
        """Clip ``index`` of the dataset built from ``seed``; indices past n_clips give held-out clips."""
        return self.make_clip(clip_seed(seed, index), frames)

    def build_dataset(self, n_clips: int, frames_per_clip: int, seed: int) -> List[ClipRecord]:
        """Clip i is built from seed sequence [seed, i], independent of n_clips."""
        if n_clips < 1:
            raise ConfigurationError(f"dataset needs at least one clip, got {n_clips}")
        records = [self.clip_at(seed, i, frames_per_clip) for i in range(n_clips)]
        logger.info("built %d clips of %d frames (seed %d)", n_clips, frames_per_clip, seed)
        return records


def build_dataset(n_clips: int, frames_per_clip: int, seed: int, size: int = FRAME_SIZE) -> List[ClipRecord]:
    return SyntheticWorld(size).build_dataset(n_clips, frames_per_clip, seed)


def keypoint_track(identity: BlobIdentity, frames: int) -> Dict[str, np.ndarray]:
    """Ground-truth mouth and face keypoints per frame, [N, 2] each as (x, y)."""
    return {
        "mouth": np.tile(np.asarray(identity.mouth_keypoint, dtype=np.float64), (frames, 1)),
        "face": np.tile(np.asarray(identity.center, dtype=np.float64), (frames, 1)),
    }
