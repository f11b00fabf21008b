"""
Scaled-dot-product attention, single-condition cross-attention and the
decoupled multi-condition cross-attention that shares one query projection
across condition streams and sums the per-stream results with scalar weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from numeric import Tensor, add, as_tensor, linear, matmul, mul, permute, reshape, scale, softmax_lastaxis
from talk_core.errors import ConfigurationError, DimensionError

from .params import ParamSpec, Scope, materialize


@dataclass(frozen=True)
class ConditionStream:
    """Condition tokens [batch, n_tokens, d_cond] and the stream's scalar weight."""

    tokens: Tensor
    weight: Union[Tensor, float] = 1.0

    def __post_init__(self) -> None:
        if self.tokens.ndim != 3:
            raise DimensionError(f"condition tokens must be [batch, n_tokens, d_cond], got {self.tokens.shape}")
        w = self.weight.data if isinstance(self.weight, Tensor) else np.asarray(self.weight)
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("condition stream weight must be finite")


@dataclass(frozen=True)
class AttentionParams:
    """One shared query projection, one output projection, a (Wk, Wv) pair per stream."""

    wq: Tensor
    wo: Tensor
    keys: tuple[Tensor, ...]
    values: tuple[Tensor, ...]
    heads: int = 1

    def __post_init__(self) -> None:
        if len(self.keys) != len(self.values):
            raise ConfigurationError("every condition stream needs both a key and a value projection")
        d_inner = self.wq.shape[1]
        if d_inner % self.heads:
            raise ConfigurationError(f"{self.heads} heads do not divide inner width {d_inner}")

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @property
    def d_inner(self) -> int:
        return self.wq.shape[1]

    @property
    def n_streams(self) -> int:
        return len(self.keys)

    @classmethod
    def from_scope(cls, scope: Scope, n_streams: int, heads: int = 1) -> "AttentionParams":
        return cls(
            wq=scope["wq"],
            wo=scope["wo"],
            keys=tuple(scope[f"wk{i}"] for i in range(n_streams)),
            values=tuple(scope[f"wv{i}"] for i in range(n_streams)),
            heads=heads,
        )


def attention_specs(d_model: int, d_inner: int, cond_dims: Sequence[int]) -> List[ParamSpec]:
    specs: List[ParamSpec] = [("wq", (d_model, d_inner), "dense"), ("wo", (d_inner, d_model), "dense")]
    for i, d_cond in enumerate(cond_dims):
        specs.append((f"wk{i}", (d_cond, d_inner), "dense"))
        specs.append((f"wv{i}", (d_cond, d_inner), "dense"))
    return specs


def init_attention(
    rng: np.random.Generator,
    d_model: int,
    d_inner: int,
    cond_dims: Sequence[int],
) -> dict[str, np.ndarray]:
    return materialize(attention_specs(d_model, d_inner, cond_dims), rng)


def scaled_dot_attention(
    q: object,
    k: object,
    v: object,
    return_weights: bool = False,
) -> Union[Tensor, tuple[Tensor, Tensor]]:
    """softmax(Q·Kᵀ/√d)·V over [..., n, d], [..., m, d], [..., m, dv]."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim < 2 or k.ndim != q.ndim or v.ndim != q.ndim:
        raise DimensionError(f"attention operands must share rank >= 2: {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = scale(matmul(q, permute(k, axes)), 1.0 / math.sqrt(q.shape[-1]))
    weights = softmax_lastaxis(scores)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[b, n, d] -> [b, heads, n, d // heads]; a no-op for one head."""
    if heads == 1:
        return x
    b, n, d = x.shape
    return permute(reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor, heads: int) -> Tensor:
    """Inverse of ``split_heads``."""
    if heads == 1:
        return x
    b, h, n, dh = x.shape
    return reshape(permute(x, (0, 2, 1, 3)), (b, n, h * dh))


def _check_inputs(x: Tensor, params: AttentionParams) -> None:
    if x.ndim != 3 or x.shape[-1] != params.d_model:
        raise DimensionError(f"attention input must be [batch, n, {params.d_model}], got {x.shape}")


def _attend(q: Tensor, tokens: Tensor, wk: Tensor, wv: Tensor, params: AttentionParams) -> Tensor:
    if tokens.shape[-1] != wk.shape[0]:
        raise DimensionError(f"condition width {tokens.shape[-1]} != key projection input {wk.shape[0]}")
    if tokens.shape[0] not in (1, q.shape[0]):
        raise DimensionError(f"condition batch {tokens.shape[0]} incompatible with query batch {q.shape[0]}")
    k = split_heads(linear(tokens, wk), params.heads)
    v = split_heads(linear(tokens, wv), params.heads)
    attended = scaled_dot_attention(split_heads(q, params.heads), k, v)
    return linear(merge_heads(attended, params.heads), params.wo)


def cross_attention(x: object, cond: ConditionStream, params: AttentionParams, stream: int = 0) -> Tensor:
    """Attention of ``x`` queries over one condition stream, projected back to d_model (unweighted)."""
    x = as_tensor(x)
    _check_inputs(x, params)
    if not 0 <= stream < params.n_streams:
        raise DimensionError(f"stream index {stream} outside {params.n_streams} key/value pairs")
    q = linear(x, params.wq)
    return _attend(q, cond.tokens, params.keys[stream], params.values[stream], params)


def decoupled_cross_attention(x: object, streams: Sequence[ConditionStream], params: AttentionParams) -> Tensor:
    """Σ_i w_i · CrossAttn_i(Q, K_i, V_i) with Q computed once and shared."""
    x = as_tensor(x)
    _check_inputs(x, params)
    if not streams:
        raise DimensionError("decoupled cross-attention needs at least one condition stream")
    if len(streams) != params.n_streams:
        raise DimensionError(f"{len(streams)} condition streams but {params.n_streams} key/value pairs")
    q = linear(x, params.wq)
    total: Optional[Tensor] = None
    for i, stream in enumerate(streams):
        term = mul(stream.weight, _attend(q, stream.tokens, params.keys[i], params.values[i], params))
        total = term if total is None else add(total, term)
    return total


def positional_encoding(n_positions: int, d_model: int) -> Tensor:
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(same)."""
    if d_model % 2:
        raise ConfigurationError(f"positional encoding width must be even, got {d_model}")
    if n_positions < 1:
        raise ConfigurationError(f"need at least one position, got {n_positions}")
    position = np.arange(n_positions, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((n_positions, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates)
    return Tensor(table)


def stream_weights(values: Sequence[float]) -> List[Tensor]:
    return [Tensor(np.array([w], dtype=np.float32)) for w in values]


__all__ = [
    "AttentionParams",
    "ConditionStream",
    "attention_specs",
    "cross_attention",
    "decoupled_cross_attention",
    "init_attention",
    "merge_heads",
    "positional_encoding",
    "scaled_dot_attention",
    "split_heads",
    "stream_weights",
]
