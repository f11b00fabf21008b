"""Dense tensors and the define-by-run gradient tape."""
from __future__ import annotations

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from talk_core.errors import DimensionError, NumericFailure

logger = logging.getLogger(__name__)

MAX_RANK = 5

Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Runtime(threading.local):
    """Per-thread numeric state: working dtype, debug checks and the tape stack."""

    def __init__(self) -> None:
        self.dtype = np.dtype(np.float32)
        self.debug = False
        self.tapes: list[GradTape] = []


_runtime = _Runtime()


def working_dtype() -> np.dtype:
    return _runtime.dtype


@contextmanager
def precision(dtype: Union[str, np.dtype, type] = "float64") -> Iterator[None]:
    """Run a block with a different working dtype (float64 for finite-difference audits)."""
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {resolved}")
    previous = _runtime.dtype
    _runtime.dtype = resolved
    try:
        yield
    finally:
        _runtime.dtype = previous


def set_debug(enabled: bool) -> None:
    """Assert finiteness after every op (debug) or only at loss computation (release)."""
    _runtime.debug = bool(enabled)


def debug_enabled() -> bool:
    return _runtime.debug


@contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    previous = _runtime.debug
    _runtime.debug = enabled
    try:
        yield
    finally:
        _runtime.debug = previous


def _check_shape(shape: tuple[int, ...]) -> None:
    if len(shape) > MAX_RANK:
        raise DimensionError(f"rank {len(shape)} exceeds the maximum of {MAX_RANK}: {shape}")
    if any(d < 1 for d in shape):
        raise DimensionError(f"every dimension must be >= 1, got {shape}")


class Tensor:
    """
    Immutable dense float array with shape metadata.

    Data is stored row-major in the working dtype (float32 unless a ``precision``
    block says otherwise). Construction from user data rejects NaN/Inf; op results
    are only checked in debug mode.
    """

    __slots__ = ("data", "requires_grad", "op")

    def __init__(self, data: object, requires_grad: bool = False) -> None:
        array = np.array(data, dtype=_runtime.dtype, order="C")
        _check_shape(array.shape)
        if not np.all(np.isfinite(array)):
            raise NumericFailure("non-finite values at tensor construction", {"shape": array.shape})
        array.setflags(write=False)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool, op: str) -> "Tensor":
        out = cls.__new__(cls)
        array = np.ascontiguousarray(array, dtype=_runtime.dtype)
        if _runtime.debug and not np.all(np.isfinite(array)):
            raise NumericFailure(f"non-finite output from {op}", {"shape": array.shape})
        array.setflags(write=False)
        out.data = array
        out.requires_grad = requires_grad
        out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False, op="detach")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # Arithmetic sugar; implementations live in numeric.ops.
    def __add__(self, other: object) -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other: object) -> "Tensor":
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other: object) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: object) -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: object) -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other: object) -> "Tensor":
        from . import ops
        return ops.mul(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: object) -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        from . import ops
        return ops.permute(self, axes)

    def sum(self, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence[float]]


def as_tensor(value: object) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Backward


class GradTape:
    """
    Records differentiable ops executed inside its ``with`` block.

    One tape per training step. ``gradient`` walks the records in reverse
    recording order (a valid reverse topological order for define-by-run
    graphs), visiting each exactly once.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self.visited = 0

    def __enter__(self) -> "GradTape":
        _runtime.tapes.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        popped = _runtime.tapes.pop()
        if popped is not self:
            raise RuntimeError("gradient tapes exited out of order")

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Backward) -> None:
        self._records.append(_Record(output, inputs, backward))

    def gradient(
        self,
        target: Tensor,
        sources: Mapping[str, Tensor],
        output_grad: Optional[np.ndarray] = None,
    ) -> dict[str, np.ndarray]:
        """Gradients of ``target`` w.r.t. each named source (zeros where unreachable)."""
        if output_grad is None:
            seed = np.ones(target.shape, dtype=np.float64)
        else:
            seed = np.asarray(output_grad, dtype=np.float64)
            if seed.shape != target.shape:
                raise DimensionError(f"output_grad shape {seed.shape} != target shape {target.shape}")

        grads: dict[int, np.ndarray] = {id(target): seed}
        self.visited = 0
        for record in reversed(self._records):
            self.visited += 1
            upstream = grads.pop(id(record.output), None)
            if upstream is None:
                continue
            input_grads = record.backward(upstream)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise DimensionError(
                        f"gradient shape {grad.shape} does not match tensor {tensor.shape} (op {record.output.op})"
                    )
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = np.asarray(grad, dtype=np.float64)

        result = {}
        for name, tensor in sources.items():
            grad = grads.get(id(tensor))
            if grad is None:
                grad = np.zeros(tensor.shape, dtype=np.float64)
            result[name] = grad.astype(tensor.data.dtype)
        self._records.clear()
        return result


def active_tape() -> Optional[GradTape]:
    return _runtime.tapes[-1] if _runtime.tapes else None


def record_op(op: str, array: np.ndarray, inputs: Sequence[Tensor], backward: Backward) -> Tensor:
    """Wrap an op result and put it on the active tape when any input is tracked."""
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(array, requires_grad=tracked, op=op)
    if tracked:
        tape.record(out, tuple(inputs), backward)
    return out
