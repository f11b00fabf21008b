"""
Writes sampled clips to disk as numbered PNG frames and an optional GIF
preview, and reads single PNG frames back as [3, h, w] arrays.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
from einops import EinopsError, rearrange
from PIL import Image

from talk_core.errors import DimensionError

logger = logging.getLogger(__name__)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """[3, h, w] in [0, 1] -> [h, w, 3] uint8."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DimensionError(f"frame must be [3, h, w], got {frame.shape}")
    pixels = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    return rearrange(pixels, "c h w -> h w c")


def load_png(path: Union[str, Path]) -> np.ndarray:
    """PNG file -> [3, h, w] float32 in [0, 1]."""
    with Image.open(path) as image:
        pixels = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    return rearrange(pixels, "h w c -> c h w")


class FrameExporter:
    def __init__(self, out_dir: Union[str, Path], prefix: str = "frame", scale: int = 1):
        """
        Args:
            out_dir: directory receiving the frames (created if missing)
            prefix: file name stem, frames are written as <prefix>_0000.png
            scale: integer nearest-neighbour upscale for viewing
        """
        self.out_dir = Path(out_dir)
        self.prefix = prefix
        self.scale = scale

    def _image(self, frame: np.ndarray) -> Image.Image:
        image = Image.fromarray(to_uint8(frame))
        if self.scale > 1:
            image = image.resize((image.width * self.scale, image.height * self.scale), Image.Resampling.NEAREST)
        return image

    def save_png_sequence(self, clip: np.ndarray) -> Dict[str, Any]:
        """
        Write a [3, N, h, w] clip as numbered PNG files.

        Returns:
            {
                'out_dir': str,
                'files': [...],
                'total_frames': int,
                'error': None or Error message
            }
        """
        files: List[str] = []
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for k, frame in enumerate(rearrange(np.asarray(clip), "c n h w -> n c h w")):
                path = self.out_dir / f"{self.prefix}_{k:04d}.png"
                self._image(frame).save(path, format="PNG")
                files.append(str(path))
        except (OSError, DimensionError, EinopsError, ValueError) as e:
            return {"out_dir": str(self.out_dir), "files": files, "total_frames": len(files), "error": str(e)}
        logger.debug("wrote %d frames to %s", len(files), self.out_dir)
        return {"out_dir": str(self.out_dir), "files": files, "total_frames": len(files), "error": None}

    def save_gif(self, clip: np.ndarray, name: str = "clip.gif", fps: int = 8) -> Dict[str, Any]:
        """
        Returns:
            {'path': str, 'error': None or Error message}
        """
        path = self.out_dir / name
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            images = [self._image(f) for f in rearrange(np.asarray(clip), "c n h w -> n c h w")]
            images[0].save(
                path, format="GIF", save_all=True, append_images=images[1:], duration=int(1000 / fps), loop=0
            )
        except (OSError, DimensionError, EinopsError, ValueError, IndexError) as e:
            return {"path": str(path), "error": str(e)}
        return {"path": str(path), "error": None}
