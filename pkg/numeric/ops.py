"""Differentiable elementwise, reduction and layout ops."""
from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from talk_core.errors import DimensionError

from .tensor import Tensor, as_tensor, record_op

Axis = Optional[Union[int, tuple[int, ...]]]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op("add", a.data + b.data, (a, b), backward)


def sub(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op("sub", a.data - b.data, (a, b), backward)


def mul(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op("mul", a.data * b.data, (a, b), backward)


def scale(x: object, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)

    def backward(g: np.ndarray):
        return (g * factor,)

    return record_op("scale", x.data * factor, (x,), backward)


def matmul(a: object, b: object) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]``; inner products accumulate in float64."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from None

    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)

    def backward(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b64, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a64, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return record_op("matmul", np.matmul(a64, b64), (a, b), backward)


def reshape(x: object, shape: Sequence[int]) -> Tensor:
    """Row-major reshape; the element order of the buffer is preserved."""
    x = as_tensor(x)
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    original = x.shape

    def backward(g: np.ndarray):
        return (g.reshape(original),)

    return record_op("reshape", x.data.reshape(shape), (x,), backward)


def permute(x: object, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return record_op("permute", np.transpose(x.data, axes), (x,), backward)


def sum(x: object, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    total = x.data.astype(np.float64).sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record_op("sum", total, (x,), backward)


def mean(x: object, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax_lastaxis(x: object) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    shifted = x.data.astype(np.float64) - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record_op("softmax", y, (x,), backward)


def concat(tensors: Sequence[object], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise DimensionError("concat needs at least one tensor")
    rank = parts[0].ndim
    axis = axis % rank
    for p in parts[1:]:
        if p.ndim != rank or any(p.shape[i] != parts[0].shape[i] for i in range(rank) if i != axis):
            raise DimensionError(f"concat shapes disagree off axis {axis}: {[q.shape for q in parts]}")
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return record_op("concat", np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def repeat_batch(x: object, repeats: int) -> Tensor:
    """Repeat every leading-axis entry ``repeats`` times in place ([b, ...] -> [b*repeats, ...])."""
    x = as_tensor(x)
    if repeats < 1:
        raise DimensionError(f"repeats must be >= 1, got {repeats}")

    def backward(g: np.ndarray):
        return (g.reshape((x.shape[0], repeats) + x.shape[1:]).sum(axis=1),)

    return record_op("repeat_batch", np.repeat(x.data, repeats, axis=0), (x,), backward)


def take_rows(table: object, ids: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D table (embedding lookup)."""
    table = as_tensor(table)
    index = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows needs a 2-D table, got {table.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise DimensionError(f"row ids out of range for table {table.shape}")

    def backward(g: np.ndarray):
        grad = np.zeros(table.shape, dtype=np.float64)
        np.add.at(grad, index.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return record_op("take_rows", table.data[index], (table,), backward)
