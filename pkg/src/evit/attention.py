"""Bi-fovea self-attention: a shallow and a deep attention pathway per block.

Both pathways run the same multi-head attention; they differ only in their
parameters and in how aggressively they shrink the key/value grid. Queries
are projected from the full-resolution map; keys and values come from a
strided depthwise convolution that pools ``reduction x reduction`` patches
(skipped entirely at reduction 1). The two pathways can be wired three ways:

* ``parallel``  - shallow(x) + deep(x)
* ``cascade``   - deep(shallow(x))
* ``bifovea``   - shallow(x) + deep(shallow(x)), the default

Projections carry no bias terms; the strided reduction convolution keeps its
bias. Attention weights can be captured for visualization via an optional
dict argument.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .init import conv_fan_out, trunc_normal, zeros
from .maps import dwconv_bias, map_to_tokens, tokens_to_map
from .tensor import Tensor


class ConnectionPattern(enum.Enum):
    """How the shallow and deep foveae are combined inside a block."""

    PARALLEL = "parallel"
    CASCADE = "cascade"
    BIFOVEA = "bifovea"


@dataclass(frozen=True)
class AttentionConfig:
    dim: int
    heads: int
    sfa_reduction: int
    dfa_reduction: int

    def __post_init__(self) -> None:
        if self.dim <= 0 or self.heads <= 0:
            raise ConfigError(f"dim and heads must be positive, got {self.dim}, {self.heads}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.sfa_reduction < 1 or self.dfa_reduction < 1:
            raise ConfigError(
                f"reductions must be >= 1, got {self.sfa_reduction}, {self.dfa_reduction}"
            )

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class FoveaParams:
    """Weights for one attention pathway."""

    q_weight: Tensor
    k_weight: Tensor
    v_weight: Tensor
    out_weight: Tensor
    reduce_weight: Tensor | None = None
    reduce_bias: Tensor | None = None

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        pairs = [
            (f"{prefix}.q_weight", self.q_weight),
            (f"{prefix}.k_weight", self.k_weight),
            (f"{prefix}.v_weight", self.v_weight),
            (f"{prefix}.out_weight", self.out_weight),
        ]
        if self.reduce_weight is not None:
            pairs.insert(0, (f"{prefix}.reduce.weight", self.reduce_weight))
            pairs.insert(1, (f"{prefix}.reduce.bias", self.reduce_bias))
        return pairs


@dataclass
class BfsaParams:
    sfa: FoveaParams
    dfa: FoveaParams

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return self.sfa.named(f"{prefix}.sfa") + self.dfa.named(f"{prefix}.dfa")


def init_fovea_params(rng: np.random.Generator, dim: int, reduction: int) -> FoveaParams:
    reduce_weight = None
    reduce_bias = None
    if reduction > 1:
        reduce_weight = conv_fan_out(rng, (dim, 1, reduction, reduction), groups=dim)
        reduce_bias = zeros((dim,))
    return FoveaParams(
        q_weight=trunc_normal(rng, (dim, dim)),
        k_weight=trunc_normal(rng, (dim, dim)),
        v_weight=trunc_normal(rng, (dim, dim)),
        out_weight=trunc_normal(rng, (dim, dim)),
        reduce_weight=reduce_weight,
        reduce_bias=reduce_bias,
    )


def init_bfsa_params(rng: np.random.Generator, cfg: AttentionConfig) -> BfsaParams:
    return BfsaParams(
        sfa=init_fovea_params(rng, cfg.dim, cfg.sfa_reduction),
        dfa=init_fovea_params(rng, cfg.dim, cfg.dfa_reduction),
    )


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(N, T, C) -> (N, heads, T, C/heads)."""
    n, t, c = x.shape
    return T.transpose(T.reshape(x, (n, t, heads, c // heads)), (0, 2, 1, 3))


def _fovea_attention(
    x: Tensor,
    heads: int,
    reduction: int,
    params: FoveaParams,
    capture: dict | None = None,
    capture_key: str = "",
) -> Tensor:
    """Multi-head attention over a map, with strided key/value pooling."""
    n, c, h, w = x.shape
    if params.q_weight.shape != (c, c):
        raise ShapeError(
            f"attention weights built for dim {params.q_weight.shape[0]}, map has {c} channels"
        )
    if h % reduction != 0 or w % reduction != 0:
        raise ConfigError(
            f"map size {h}x{w} not divisible by key/value reduction {reduction}"
        )

    q = T.linear(map_to_tokens(x), params.q_weight)
    if reduction > 1:
        pooled = dwconv_bias(
            x, params.reduce_weight, params.reduce_bias, stride=reduction, padding=0
        )
        kv_tokens = map_to_tokens(pooled)
    else:
        kv_tokens = map_to_tokens(x)
    k = T.linear(kv_tokens, params.k_weight)
    v = T.linear(kv_tokens, params.v_weight)

    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)

    scale = 1.0 / math.sqrt(c // heads)
    scores = T.mul(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))), Tensor(scale))
    weights = T.softmax(scores)
    if capture is not None:
        capture[capture_key] = weights.numpy()

    mixed = T.matmul(weights, vh)
    merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (n, h * w, c))
    out = T.linear(merged, params.out_weight)
    return tokens_to_map(out, h, w)


def sfa_forward(
    x: Tensor, cfg: AttentionConfig, params: FoveaParams, capture: dict | None = None
) -> Tensor:
    """Shallow fovea: light key/value pooling, sees the finer grid."""
    return _fovea_attention(x, cfg.heads, cfg.sfa_reduction, params, capture, "sfa")


def dfa_forward(
    x: Tensor, cfg: AttentionConfig, params: FoveaParams, capture: dict | None = None
) -> Tensor:
    """Deep fovea: same attention with its own weights and (coarser) pooling."""
    return _fovea_attention(x, cfg.heads, cfg.dfa_reduction, params, capture, "dfa")


def bfsa_forward(
    x: Tensor,
    cfg: AttentionConfig,
    params: BfsaParams,
    pattern: ConnectionPattern = ConnectionPattern.BIFOVEA,
    capture: dict | None = None,
) -> Tensor:
    """Combine the two foveae according to the connection pattern."""
    if pattern is ConnectionPattern.PARALLEL:
        return T.add(
            sfa_forward(x, cfg, params.sfa, capture),
            dfa_forward(x, cfg, params.dfa, capture),
        )
    if pattern is ConnectionPattern.CASCADE:
        shallow = sfa_forward(x, cfg, params.sfa, capture)
        return dfa_forward(shallow, cfg, params.dfa, capture)
    shallow = sfa_forward(x, cfg, params.sfa, capture)
    return T.add(shallow, dfa_forward(shallow, cfg, params.dfa, capture))
