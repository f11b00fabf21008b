"""
Clip quality, sync and temporal-consistency measurements for the blob world.

All functions take clips as [3, N, h, w] arrays with values in [0, 1].
"""
from __future__ import annotations

import logging
import math
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from einops import rearrange

from talk_core.errors import DimensionError, EmptyRegionError, UndefinedCorrelationError

from .world_tool import (
    EYE_RADIUS,
    MOUTH_COLOR,
    PALETTE,
    SIZES,
    BlobIdentity,
    DriveSignal,
    disc_coverage,
    keypoint_track,
    luminance,
)

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
MIN_MOUTH_MASS = 0.5


def _same_shape(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10·log10(1 / MSE) in dB, capped at 99 dB."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8, c1: float = 1e-4, c2: float = 9e-4) -> float:
    """Mean SSIM over non-overlapping window×window tiles of every 2-D plane."""
    a, b = _same_shape(a, b)
    if a.ndim < 2 or a.shape[-2] < window or a.shape[-1] < window:
        raise DimensionError(f"image {a.shape[-2:]} smaller than the {window}x{window} SSIM window")
    h = a.shape[-2] // window * window
    w = a.shape[-1] // window * window
    tiles_a = rearrange(a[..., :h, :w], "... (y p) (x q) -> ... y x (p q)", p=window, q=window)
    tiles_b = rearrange(b[..., :h, :w], "... (y p) (x q) -> ... y x (p q)", p=window, q=window)
    mu_a, mu_b = tiles_a.mean(axis=-1), tiles_b.mean(axis=-1)
    var_a, var_b = tiles_a.var(axis=-1), tiles_b.var(axis=-1)
    cov = ((tiles_a - mu_a[..., None]) * (tiles_b - mu_b[..., None])).mean(axis=-1)
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _frames(clip: np.ndarray) -> np.ndarray:
    """[3, N, h, w] -> [N, 3, h, w]."""
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 4 or clip.shape[0] != 3:
        raise DimensionError(f"clip must be [3, N, h, w], got {clip.shape}")
    return rearrange(clip, "c n h w -> n c h w")


def _mouth_region(identity: BlobIdentity, size: int) -> np.ndarray:
    """Pixels touching the largest possible mouth that lie fully inside the blob."""
    mx, my = identity.mouth_center
    half_w = identity.mouth_half_width
    top = my - identity.radius / 4.0 - identity.smile
    bottom = my + identity.radius / 4.0
    cols = np.arange(size)
    rows = np.arange(size)
    in_x = (cols + 1 > mx - half_w) & (cols < mx + half_w)
    in_y = (rows + 1 > top) & (rows < bottom)
    box = in_y[:, None] & in_x[None, :]
    return box & (disc_coverage(identity.center, identity.radius, size) >= 1.0)


def _mouth_mass(frame: np.ndarray, identity: BlobIdentity) -> np.ndarray:
    """Per-pixel mouth coverage recovered from luminance, zero outside the mouth region."""
    size = frame.shape[-1]
    skin, mouth = float(luminance(identity.color)), float(luminance(MOUTH_COLOR))
    mass = np.clip((skin - luminance(frame)) / (skin - mouth), 0.0, 1.0)
    return np.where(_mouth_region(identity, size), mass, 0.0)


def mouth_aperture(frame: np.ndarray, identity: BlobIdentity) -> float:
    """Aperture estimate: recovered mouth area over the area of a fully open mouth."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DimensionError(f"frame must be [3, h, w], got {frame.shape}")
    full_area = math.pi * identity.mouth_half_width * identity.radius / 4.0
    return float(_mouth_mass(frame, identity).sum() / full_area)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"correlation inputs differ in length: {x.shape} vs {y.shape}")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(np.sum(dx * dx))), math.sqrt(float(np.sum(dy * dy)))
    if sx <= 1e-12 or sy <= 1e-12:
        raise UndefinedCorrelationError("Pearson correlation of a constant sequence is undefined")
    return float(np.clip(np.sum(dx * dy) / (sx * sy), -1.0, 1.0))


def sync_corr(clip: np.ndarray, signal: DriveSignal | Sequence[float], identity: BlobIdentity) -> float:
    """Pearson r between per-frame aperture estimates and the drive signal."""
    values = signal.as_array() if isinstance(signal, DriveSignal) else np.asarray(signal, dtype=np.float64)
    frames = _frames(clip)
    if len(frames) != len(values):
        raise DimensionError(f"clip has {len(frames)} frames, signal {len(values)} values")
    if len(values) < 3:
        raise DimensionError("sync correlation needs at least 3 frames")
    estimates = [mouth_aperture(f, identity) for f in frames]
    return pearson(estimates, values)


def blob_coverage(frame: np.ndarray, color: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Fractional blob coverage per pixel, with every row filled between its
    outermost solid pixels so the dark mouth and eyes count as face.
    """
    frame = np.asarray(frame, dtype=np.float64)
    bright = frame.max(axis=0)
    if color is None:
        solid = bright > 0.3
        if not solid.any():
            return np.zeros(bright.shape)
        reference = float(np.median(bright[solid]))
    else:
        reference = float(np.max(color))
    coverage = np.clip(bright / reference, 0.0, 1.0)
    for row in coverage:
        solid_cols = np.flatnonzero(row >= 0.5)
        if solid_cols.size:
            row[solid_cols[0]:solid_cols[-1] + 1] = 1.0
    return coverage


def _centroid(weights: np.ndarray) -> Tuple[float, float]:
    total = float(weights.sum())
    if total <= 0.0:
        raise EmptyRegionError("no support in the measured region")
    centers = np.arange(weights.shape[0]) + 0.5
    x = float((weights.sum(axis=0) * centers).sum() / total)
    y = float((weights.sum(axis=1) * centers).sum() / total)
    return x, y


def face_center(frame: np.ndarray, color: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    return _centroid(blob_coverage(frame, color))


def mouth_center(frame: np.ndarray, identity: BlobIdentity) -> Optional[Tuple[float, float]]:
    """Centroid of the recovered mouth, or None for a (nearly) closed mouth."""
    mass = _mouth_mass(frame, identity)
    if mass.sum() < MIN_MOUTH_MASS:
        return None
    return _centroid(mass)


def landmark_distance(
    clip: np.ndarray,
    identity: BlobIdentity,
    true_keypoints: Optional[Dict[str, np.ndarray]] = None,
) -> Tuple[float, float]:
    """(mouth_lmd, face_lmd): mean Euclidean keypoint error in pixels."""
    frames = _frames(clip)
    truth = true_keypoints or keypoint_track(identity, len(frames))
    face_errors, mouth_errors = [], []
    for k, frame in enumerate(frames):
        fx, fy = face_center(frame, identity.color)
        face_errors.append(math.hypot(fx - truth["face"][k][0], fy - truth["face"][k][1]))
        measured = mouth_center(frame, identity)
        if measured is not None:
            mouth_errors.append(math.hypot(measured[0] - truth["mouth"][k][0], measured[1] - truth["mouth"][k][1]))
    if not mouth_errors:
        raise EmptyRegionError("no frame shows an open mouth")
    return float(np.mean(mouth_errors)), float(np.mean(face_errors))


def _pair_differences(clip: np.ndarray) -> np.ndarray:
    frames = _frames(clip)
    if len(frames) < 2:
        raise DimensionError("temporal metrics need at least 2 frames")
    return np.mean((frames[1:] - frames[:-1]) ** 2, axis=(1, 2, 3))


def flicker(clip: np.ndarray) -> float:
    """Mean over consecutive frame pairs of the mean squared frame difference."""
    return float(np.mean(_pair_differences(clip)))


def seam_jump(clip: np.ndarray, handoff_pairs: Sequence[Tuple[int, int]]) -> float:
    """Mean difference across segment hand-off pairs minus the mean over all other pairs."""
    diffs = _pair_differences(clip)
    seams = sorted({k for k, k1 in handoff_pairs if k1 == k + 1 and 0 <= k < len(diffs)})
    if not seams:
        return 0.0
    mask = np.zeros(len(diffs), dtype=bool)
    mask[seams] = True
    elsewhere = float(diffs[~mask].mean()) if (~mask).any() else 0.0
    return float(diffs[mask].mean()) - elsewhere


def _interior_mask(identity: BlobIdentity, size: int) -> np.ndarray:
    """Blob pixels away from the mouth and eyes, where the skin colour shows unmixed."""
    mask = disc_coverage(identity.center, identity.radius, size) >= 1.0
    mask &= ~_mouth_region(identity, size)
    for eye in identity.eyes:
        mask &= disc_coverage(eye, EYE_RADIUS + 1.0, size) == 0.0
    return mask


def color_distance(clip: np.ndarray, identity: BlobIdentity) -> float:
    """Euclidean RGB distance between the mean interior blob colour and the identity colour."""
    frames = _frames(clip)
    mask = _interior_mask(identity, frames.shape[-1])
    if not mask.any():
        raise EmptyRegionError("identity geometry leaves no interior pixels")
    mean_color = rearrange(frames, "n c h w -> c n h w")[:, :, mask].mean(axis=(1, 2))
    return float(np.linalg.norm(mean_color - np.asarray(identity.color)))


def measure_attributes(frame: np.ndarray) -> Dict[str, Any]:
    """Nearest palette colour and size class of the blob in one frame."""
    frame = np.asarray(frame, dtype=np.float64)
    bright = frame.max(axis=0)
    if not (bright > 0.3).any():
        raise EmptyRegionError("frame contains no blob")
    color = frame[:, bright >= 0.9 * bright.max()].mean(axis=1)
    color_name = min(PALETTE, key=lambda n: float(np.linalg.norm(color - np.asarray(PALETTE[n]))))
    radius = math.sqrt(float(blob_coverage(frame).sum()) / math.pi)
    size_name = min(SIZES, key=lambda n: abs(SIZES[n] - radius))
    return {"color": color_name, "size": size_name, "radius": radius, "rgb": color.tolist()}


def attribute_compliance(clip: np.ndarray, tokens: Sequence[str]) -> float:
    """Fraction of frames whose measured colour and size match the prompt's colour/size tokens."""
    wanted_color = next((t for t in tokens if t in PALETTE), None)
    wanted_size = next((t for t in tokens if t in SIZES), None)
    hits = 0
    frames = _frames(clip)
    for frame in frames:
        try:
            measured = measure_attributes(frame)
        except EmptyRegionError:
            continue
        ok = (wanted_color is None or measured["color"] == wanted_color) and (
            wanted_size is None or measured["size"] == wanted_size
        )
        hits += int(ok)
    return hits / len(frames)


class ClipEvaluator:
    """Runs every clip-level metric and reports failures per metric instead of raising."""

    def __init__(self, ssim_window: int = 8):
        self.ssim_window = ssim_window

    def evaluate(
        self,
        generated: np.ndarray,
        reference: Optional[np.ndarray],
        identity: BlobIdentity,
        signal: DriveSignal,
        tokens: Sequence[str],
        handoff_pairs: Sequence[Tuple[int, int]] = (),
    ) -> Dict[str, Any]:
        """
        Returns:
            {
                'psnr': float or None, 'ssim': float or None,
                'mouth_lmd': float or None, 'face_lmd': float or None,
                'sync_corr': float or None, 'flicker': float, 'seam_jump': float,
                'color_distance': float or None, 'attribute_compliance': float,
                'errors': {metric: message}
            }
        """
        result: Dict[str, Any] = {"errors": {}}

        def attempt(name: str, fn):
            try:
                result[name] = fn()
            except (EmptyRegionError, UndefinedCorrelationError, DimensionError) as exc:
                result[name] = None
                result["errors"][name] = str(exc)

        attempt("psnr", lambda: psnr(generated, reference) if reference is not None else None)
        attempt("ssim", lambda: ssim(generated, reference, self.ssim_window) if reference is not None else None)
        try:
            result["mouth_lmd"], result["face_lmd"] = landmark_distance(generated, identity)
        except EmptyRegionError as exc:
            result["mouth_lmd"] = result["face_lmd"] = None
            result["errors"]["landmark_distance"] = str(exc)
        attempt("sync_corr", lambda: sync_corr(generated, signal, identity))
        attempt("flicker", lambda: flicker(generated))
        attempt("seam_jump", lambda: seam_jump(generated, handoff_pairs))
        attempt("color_distance", lambda: color_distance(generated, identity))
        attempt("attribute_compliance", lambda: attribute_compliance(generated, tokens))
        if result["errors"]:
            logger.debug("metric failures: %s", result["errors"])
        return result
