"""
Binary tensor containers.

MTK1 record (little-endian):
    b"MTK1" | rank: u32 | dims: rank x u32 | data: prod(dims) x f32

MTKB bundle:
    b"MTKB" | header_len: u32 | header: UTF-8 JSON (sorted keys, lists ``tensors``)
    | one MTK1 record per name in ``header["tensors"]`` order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

from talk_core.errors import CheckpointError

from .tensor import Tensor

MAGIC = b"MTK1"
BUNDLE_MAGIC = b"MTKB"

ArrayLike = Union[Tensor, np.ndarray]


def _as_array(value: ArrayLike) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def encode_tensor(value: ArrayLike) -> bytes:
    array = _as_array(value)
    header = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(buffer: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one MTK1 record starting at ``offset``; returns (array, next offset)."""
    if buffer[offset:offset + 4] != MAGIC:
        raise CheckpointError(f"bad tensor magic at byte {offset}")
    (rank,) = struct.unpack_from("<I", buffer, offset + 4)
    offset += 8
    dims = struct.unpack_from(f"<{rank}I", buffer, offset)
    offset += 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    end = offset + 4 * count
    if end > len(buffer):
        raise CheckpointError("tensor record truncated")
    array = np.frombuffer(buffer, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)
    return array, end


def save_tensor(path: Union[str, Path], value: ArrayLike) -> None:
    Path(path).write_bytes(encode_tensor(value))


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    array, _ = decode_tensor(Path(path).read_bytes())
    return array


def save_bundle(path: Union[str, Path], header: Mapping[str, Any], tensors: Mapping[str, ArrayLike]) -> None:
    names = list(tensors)
    full_header = dict(header)
    full_header["tensors"] = names
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    chunks = [BUNDLE_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    chunks.extend(encode_tensor(tensors[name]) for name in names)
    Path(path).write_bytes(b"".join(chunks))


def load_bundle(path: Union[str, Path]) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    buffer = Path(path).read_bytes()
    if buffer[:4] != BUNDLE_MAGIC:
        raise CheckpointError(f"{path} is not an MTKB bundle")
    (length,) = struct.unpack_from("<I", buffer, 4)
    header = json.loads(buffer[8:8 + length].decode("utf-8"))
    offset = 8 + length
    tensors: dict[str, np.ndarray] = {}
    for name in header.get("tensors", []):
        tensors[name], offset = decode_tensor(buffer, offset)
    if offset != len(buffer):
        raise CheckpointError(f"{path} has {len(buffer) - offset} trailing bytes")
    return header, tensors
