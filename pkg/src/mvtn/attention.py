"""Pyramid schedules and the reduced-channel multi-head attention block.

Each stage projects Q, K and V from ``d_model`` down to the stage width
``d_j`` taken from a pyramid schedule, attends per head at width
``d_j / heads``, then projects back to ``d_model``. The token count is never
reduced; all reduction happens in the channel dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, linear, matmul, reshape, softmax, transpose


class ScheduleKind(str, Enum):
    P_DIM = "p_dim"
    P_DIM_REV = "p_dim_rev"
    P_DIM_PLUS = "p_dim_plus"
    COLUMNAR = "columnar"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown schedule kind {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class PyramidSchedule:
    kind: ScheduleKind
    d_model: int
    stages: int
    dims: tuple

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)


def _exact_div(d_model, divisor, stage, kind):
    if d_model % divisor:
        raise ConfigError(
            f"{kind.value}: stage {stage} needs d_model/{divisor}, "
            f"but d_model={d_model} is not divisible by {divisor}"
        )
    return d_model // divisor


def pyramid_schedule(kind, d_model, stages):
    """Per-stage attention widths for a schedule kind.

    p_dim doubles from ``D / 2**(S-1)`` up to ``D``; p_dim_rev is its
    reverse; p_dim_plus is ``D/2 + D / 2**(S-j+1)`` for stage j, so every
    stage keeps at least half of ``D``; columnar is ``D`` everywhere.
    """
    kind = ScheduleKind.parse(kind)
    if stages < 1:
        raise ConfigError(f"stages must be >= 1, got {stages}")
    if d_model < 1:
        raise ConfigError(f"d_model must be >= 1, got {d_model}")
    S = stages
    if kind is ScheduleKind.COLUMNAR:
        dims = [d_model] * S
    elif kind is ScheduleKind.P_DIM_PLUS:
        half = _exact_div(d_model, 2, 1, kind)
        dims = [half + _exact_div(d_model, 2 ** (S - j + 1), j, kind) for j in range(1, S + 1)]
    else:
        dims = [_exact_div(d_model, 2 ** (S - j), j, kind) for j in range(1, S + 1)]
        if kind is ScheduleKind.P_DIM_REV:
            dims.reverse()
    return PyramidSchedule(kind, d_model, S, tuple(dims))


def check_heads(schedule, heads):
    """Raise ConfigError unless every stage width is a positive multiple of ``heads``."""
    if heads < 1:
        raise ConfigError(f"heads must be >= 1, got {heads}")
    for j, d in enumerate(schedule.dims, start=1):
        if d < heads or d % heads:
            raise ConfigError(
                f"stage {j}: attention width {d} is not a positive multiple of heads={heads}"
            )


@dataclass
class SRAParams:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    heads: int

    @property
    def d_model(self):
        return self.w_q.shape[0]

    @property
    def d_attn(self):
        return self.w_q.shape[1]

    def tensors(self):
        return [
            ("w_q", self.w_q), ("b_q", self.b_q),
            ("w_k", self.w_k), ("b_k", self.b_k),
            ("w_v", self.w_v), ("b_v", self.b_v),
            ("w_o", self.w_o), ("b_o", self.b_o),
        ]

    def num_scalars(self):
        return sum(t.size for _, t in self.tensors())


def sra_param_count(d_model, d_attn):
    return 3 * (d_model * d_attn + d_attn) + d_attn * d_model + d_model


def xavier_uniform(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def init_sra(d_model, d_attn, heads, rng):
    if d_attn < heads or d_attn % heads:
        raise ConfigError(f"attention width {d_attn} is not a positive multiple of heads={heads}")

    def zeros(n):
        return Tensor(np.zeros(n), requires_grad=True)

    return SRAParams(
        w_q=xavier_uniform(rng, d_model, d_attn), b_q=zeros(d_attn),
        w_k=xavier_uniform(rng, d_model, d_attn), b_k=zeros(d_attn),
        w_v=xavier_uniform(rng, d_model, d_attn), b_v=zeros(d_attn),
        w_o=xavier_uniform(rng, d_attn, d_model), b_o=zeros(d_model),
        heads=heads,
    )


def split_heads(x, heads):
    """B x L x d -> B x heads x L x (d / heads)."""
    B, L, d = x.shape
    return transpose(reshape(x, (B, L, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x):
    """B x heads x L x dh -> B x L x (heads * dh)."""
    B, H, L, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, L, H * dh))


def attention_weights(q, k, heads):
    """Row-stochastic B x heads x L x L weights ``softmax(Q K^T / sqrt(d_j / heads))``."""
    if q.ndim != 3 or q.shape != k.shape:
        raise ShapeError(f"attention_weights expects matching B x L x d_j, got {q.shape} and {k.shape}")
    d_attn = q.shape[-1]
    if heads < 1 or d_attn % heads:
        raise ConfigError(f"heads={heads} does not divide attention width {d_attn}")
    qh = split_heads(q, heads)
    kh = split_heads(k, heads)
    scale = 1.0 / math.sqrt(d_attn // heads)
    logits = matmul(qh, transpose(kh, (0, 1, 3, 2))) * scale
    return softmax(logits, axis=-1)


def sra_forward(x, p, return_weights=False):
    """Attention over ``x`` (B x L x d_model) through the stage width ``p.d_attn``."""
    if x.ndim != 3 or x.shape[-1] != p.d_model:
        raise ShapeError(f"sra_forward expects B x L x {p.d_model}, got {x.shape}")
    if p.heads < 1 or p.d_attn % p.heads:
        raise ConfigError(f"heads={p.heads} does not divide attention width {p.d_attn}")
    q = linear(x, p.w_q, p.b_q)
    k = linear(x, p.w_k, p.b_k)
    v = linear(x, p.w_v, p.b_v)
    weights = attention_weights(q, k, p.heads)
    context = merge_heads(matmul(weights, split_heads(v, p.heads)))
    out = linear(context, p.w_o, p.b_o)
    return (out, weights) if return_weights else out
