"""Flat, dotted-name parameter stores shared by every model in the package."""
from __future__ import annotations

from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np

from numeric import Tensor

Params = Dict[str, Tensor]
ArrayTree = Dict[str, np.ndarray]


class Scope:
    """Read-only view of a parameter store under a dotted prefix."""

    def __init__(self, params: Mapping[str, Tensor], prefix: str = "") -> None:
        self.params = params
        self.prefix = prefix

    def name(self, key: str) -> str:
        return f"{self.prefix}.{key}" if self.prefix else key

    def __getitem__(self, key: str) -> Tensor:
        return self.params[self.name(key)]

    def __contains__(self, key: str) -> bool:
        return self.name(key) in self.params

    def child(self, key: str) -> "Scope":
        return Scope(self.params, self.name(key))


def dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return (rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(np.float32)


def conv_kernel(rng: np.random.Generator, cout: int, cin: int, k: int) -> np.ndarray:
    return (rng.standard_normal((cout, cin, k, k)) * np.sqrt(1.0 / (cin * k * k))).astype(np.float32)


def zeros(*shape: int) -> np.ndarray:
    return np.zeros(shape, dtype=np.float32)


def ones(*shape: int) -> np.ndarray:
    return np.ones(shape, dtype=np.float32)


def embedding(rng: np.random.Generator, rows: int, width: int) -> np.ndarray:
    return (rng.standard_normal((rows, width)) / np.sqrt(width)).astype(np.float32)


ParamSpec = Tuple[str, Tuple[int, ...], str]

_INITIALIZERS = {
    "dense": lambda rng, shape: dense(rng, *shape),
    "conv": lambda rng, shape: conv_kernel(rng, shape[0], shape[1], shape[2]),
    "embed": lambda rng, shape: embedding(rng, *shape),
    "zeros": lambda rng, shape: zeros(*shape),
    "ones": lambda rng, shape: ones(*shape),
}


def materialize(specs: Iterable[ParamSpec], rng: np.random.Generator) -> ArrayTree:
    """Draw every parameter in declaration order, so a seed pins the whole store."""
    arrays: ArrayTree = {}
    for name, shape, kind in specs:
        if name in arrays:
            raise KeyError(f"duplicate parameter name {name}")
        arrays[name] = _INITIALIZERS[kind](rng, shape)
    return arrays


def spec_count(specs: Iterable[ParamSpec]) -> int:
    return sum(int(np.prod(shape, dtype=np.int64)) for _, shape, _ in specs)


def scoped(prefix: str, specs: Iterable[ParamSpec]) -> List[ParamSpec]:
    return [(f"{prefix}.{name}", shape, kind) for name, shape, kind in specs]


def to_params(arrays: Mapping[str, np.ndarray]) -> Params:
    return {name: Tensor(value) for name, value in arrays.items()}


def count(params: Mapping[str, object]) -> int:
    total = 0
    for value in params.values():
        total += int(np.prod(np.shape(value.data if isinstance(value, Tensor) else value), dtype=np.int64))
    return total
