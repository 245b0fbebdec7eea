"""Multi-head attention with pluggable score functions.

The principal score projects queries and keys onto the unit hypersphere
and squares the resulting cosine similarity, so attention depends only on
angular alignment. Ten further variants (plain cosine, |cosine|,
temperature-scaled cosine^2, dot-product, scaled dot-product, additive,
a per-head cosine^2 / scaled-dot mix, and four cross-stream forms) share
the same pipeline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor


class ScoreVariant(enum.Enum):
    COS_SQ = "cs2"
    COS = "cs"
    ABS_COS = "abscs"
    TEMP_COS_SQ = "tempcs2"
    DOT = "dp"
    SCALED_DOT = "sdp"
    ADDITIVE = "add"
    MIXED_COS_SQ_SDP = "msa-cs2"
    CROSS_SCALED_DOT = "c-sdp"
    CROSS_COS_SQ = "c-cs2"
    CROSS_COS = "c-cs"
    CROSS_ADDITIVE = "c-add"

    @property
    def is_cross(self):
        return self.value.startswith("c-")

    @property
    def is_cosine_family(self):
        return self in (ScoreVariant.COS_SQ, ScoreVariant.COS, ScoreVariant.ABS_COS,
                        ScoreVariant.TEMP_COS_SQ, ScoreVariant.CROSS_COS_SQ,
                        ScoreVariant.CROSS_COS)

    @property
    def needs_additive_params(self):
        return self in (ScoreVariant.ADDITIVE, ScoreVariant.CROSS_ADDITIVE)

    @classmethod
    def from_tag(cls, tag):
        try:
            return cls(tag)
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown score variant {tag!r}; valid tags: {valid}") from None


class NormMode(enum.Enum):
    NONE = "none"
    QUERY_ONLY = "query"
    KEY_ONLY = "key"
    BOTH = "both"

    @classmethod
    def from_tag(cls, tag):
        try:
            return cls(tag)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown norm mode {tag!r}; valid tags: {valid}") from None


def default_norm_mode(variant):
    """Cosine-family scores normalize both streams unless overridden."""
    if variant.is_cosine_family or variant is ScoreVariant.MIXED_COS_SQ_SDP:
        return NormMode.BOTH
    return NormMode.NONE


@dataclass
class AttentionConfig:
    model_dim: int
    heads: int
    variant: ScoreVariant = ScoreVariant.COS_SQ
    norm_mode: NormMode | None = None  # None -> default for the variant
    temperature: float = 0.5
    eps: float = 1e-12

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = ScoreVariant.from_tag(self.variant)
        if isinstance(self.norm_mode, str):
            self.norm_mode = NormMode.from_tag(self.norm_mode)
        if self.model_dim <= 0 or self.heads <= 0:
            raise ConfigError(f"model_dim and heads must be positive, got {self.model_dim}, {self.heads}")
        if self.model_dim % self.heads != 0:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    @property
    def head_dim(self):
        return self.model_dim // self.heads

    @property
    def resolved_norm_mode(self):
        return self.norm_mode if self.norm_mode is not None else default_norm_mode(self.variant)


@dataclass
class AdditiveParams:
    """Per-head additive-attention parameters, stacked along a head axis."""

    w_q: Tensor  # (H, d_a, d_h)
    w_k: Tensor  # (H, d_a, d_h)
    w_a: Tensor  # (H, d_a)
    b_a: Tensor  # (H, d_a)

    def __post_init__(self):
        h, d_a, d_h = self.w_q.shape
        if self.w_k.shape != (h, d_a, d_h) or self.w_a.shape != (h, d_a) or self.b_a.shape != (h, d_a):
            raise DimensionError(
                f"additive params inconsistent: {self.w_q.shape}, {self.w_k.shape}, "
                f"{self.w_a.shape}, {self.b_a.shape}")

    @property
    def hidden_dim(self):
        return self.w_q.shape[1]


@dataclass
class AttentionParams:
    w_q: Tensor  # (D, D)
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    additive: AdditiveParams | None = None


def project_qkv(tokens_q, tokens_kv, params):
    """Q from the query stream; K and V from the key/value stream."""
    if tokens_q.shape != tokens_kv.shape:
        raise DimensionError(
            f"token streams differ: {tokens_q.shape} vs {tokens_kv.shape}")
    q = T.matmul(tokens_q, params.w_q)
    k = T.matmul(tokens_kv, params.w_k)
    v = T.matmul(tokens_kv, params.w_v)
    return q, k, v


def split_heads(m, heads):
    """(..., N, D) -> (..., H, N, D/H); head h owns columns [h*d_h, (h+1)*d_h)."""
    d = m.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {heads} heads")
    n = m.shape[-2]
    d_h = d // heads
    stacked = T.reshape(m, m.shape[:-2] + (n, heads, d_h))
    axes = list(range(stacked.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.transpose(stacked, axes)


def merge_heads(m):
    """Inverse of split_heads: (..., H, N, d_h) -> (..., N, H*d_h)."""
    h, n, d_h = m.shape[-3:]
    axes = list(range(m.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.reshape(T.transpose(m, axes), m.shape[:-3] + (n, h * d_h))


def _check_unit_rows(t, eps, what):
    norms = np.linalg.norm(t.data, axis=-1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        raise ContractError(
            f"{what} rows must be unit-norm before cosine scoring with norm_mode=both "
            f"(max deviation {np.abs(norms - 1.0).max():.3e})")


def _cosine_like(variant, q, k, cfg):
    s = T.matmul(q, T.transpose(k))
    if variant in (ScoreVariant.COS, ScoreVariant.CROSS_COS):
        return s
    if variant is ScoreVariant.ABS_COS:
        return T.absolute(s)
    if variant is ScoreVariant.TEMP_COS_SQ:
        return T.scale(T.square(s), 1.0 / cfg.temperature)
    return T.square(s)  # COS_SQ / CROSS_COS_SQ


def additive_score(q_i, k_j, params, head=0):
    """w^T tanh(W_q q_i + W_k k_j + b) for one query/key pair of one head."""
    w_q = params.w_q.data[head]
    w_k = params.w_k.data[head]
    hidden = np.tanh(w_q @ np.asarray(q_i, dtype=np.float64)
                     + w_k @ np.asarray(k_j, dtype=np.float64)
                     + params.b_a.data[head])
    return float(params.w_a.data[head] @ hidden)


def _additive_scores(q, k, params):
    """Vectorized additive scores over (..., H, N, d_h) inputs -> (..., H, N, N)."""
    h, d_a, _ = params.w_q.shape
    n = q.shape[-2]
    qp = T.matmul(q, T.transpose(params.w_q))  # (..., H, N, d_a)
    kp = T.matmul(k, T.transpose(params.w_k))
    qp = T.reshape(qp, qp.shape[:-2] + (n, 1, d_a))
    kp = T.reshape(kp, kp.shape[:-2] + (1, n, d_a))
    bias = T.reshape(params.b_a, (h, 1, 1, d_a))
    hidden = T.tanh(T.add(T.add(qp, kp), bias))  # (..., H, N, N, d_a)
    w = T.reshape(params.w_a, (h, 1, d_a, 1))
    out = T.matmul(hidden, w)  # (..., H, N, N, 1)
    return T.reshape(out, out.shape[:-1])


def score(variant, q, k, cfg, additive_params=None):
    """Raw (pre-softmax) score matrix for already-normalized inputs.

    ``q`` and ``k`` carry trailing (N, d_h) axes; any leading batch/head
    axes broadcast. The mixed variant expects a head axis at position -3.
    """
    if isinstance(variant, str):
        variant = ScoreVariant.from_tag(variant)
    mode = cfg.resolved_norm_mode
    if variant.is_cosine_family and mode is NormMode.BOTH:
        _check_unit_rows(q, cfg.eps, "query")
        _check_unit_rows(k, cfg.eps, "key")
    if variant.is_cosine_family:
        return _cosine_like(variant, q, k, cfg)
    if variant in (ScoreVariant.DOT,):
        return T.matmul(q, T.transpose(k))
    if variant in (ScoreVariant.SCALED_DOT, ScoreVariant.CROSS_SCALED_DOT):
        d_h = q.shape[-1]
        return T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_h))
    if variant.needs_additive_params:
        if additive_params is None:
            raise ConfigError(f"variant {variant.value} requires additive parameters")
        return _additive_scores(q, k, additive_params)
    if variant is ScoreVariant.MIXED_COS_SQ_SDP:
        if q.ndim < 3 or q.shape[-3] != cfg.heads:
            raise DimensionError(
                f"mixed variant needs a head axis of size {cfg.heads}, got shape {q.shape}")
        n_cos = _mixed_cosine_heads(cfg.heads)
        q_cos = T.slice_axis(q, q.ndim - 3, 0, n_cos)
        k_cos = T.slice_axis(k, k.ndim - 3, 0, n_cos)
        if mode is NormMode.BOTH:
            _check_unit_rows(q_cos, cfg.eps, "query")
            _check_unit_rows(k_cos, cfg.eps, "key")
        s_cos = T.square(T.matmul(q_cos, T.transpose(k_cos)))
        q_sdp = T.slice_axis(q, q.ndim - 3, n_cos, cfg.heads)
        k_sdp = T.slice_axis(k, k.ndim - 3, n_cos, cfg.heads)
        s_sdp = T.scale(T.matmul(q_sdp, T.transpose(k_sdp)), 1.0 / math.sqrt(cfg.head_dim))
        return T.concat([s_cos, s_sdp], axis=q.ndim - 3)
    raise ConfigError(f"unhandled variant {variant!r}")


def _mixed_cosine_heads(heads):
    """First ceil(H/2) heads of the mixed variant score with cosine^2."""
    return (heads + 1) // 2


def attend(scores, v):
    """softmax over keys, then weighted sum of values."""
    return T.matmul(T.softmax_rows(scores), v)


def _apply_norm(q, k, cfg):
    mode = cfg.resolved_norm_mode
    if mode in (NormMode.BOTH, NormMode.QUERY_ONLY):
        q = T.l2_normalize_rows(q, cfg.eps)
    if mode in (NormMode.BOTH, NormMode.KEY_ONLY):
        k = T.l2_normalize_rows(k, cfg.eps)
    return q, k


def multi_head_attention(tokens_q, tokens_kv, cfg, params):
    """Full pipeline: project, split heads, normalize, score, attend, merge.

    ``tokens_q``/``tokens_kv`` are (..., N, D); non-cross variants pass the
    same tensor for both. Output has the input shape.
    """
    q, k, v = project_qkv(tokens_q, tokens_kv, params)
    qh = split_heads(q, cfg.heads)
    kh = split_heads(k, cfg.heads)
    vh = split_heads(v, cfg.heads)
    variant = cfg.variant
    if variant is ScoreVariant.MIXED_COS_SQ_SDP:
        axis = qh.ndim - 3
        n_cos = _mixed_cosine_heads(cfg.heads)
        q_cos, k_cos = _apply_norm(T.slice_axis(qh, axis, 0, n_cos),
                                   T.slice_axis(kh, axis, 0, n_cos), cfg)
        qh = T.concat([q_cos, T.slice_axis(qh, axis, n_cos, cfg.heads)], axis)
        kh = T.concat([k_cos, T.slice_axis(kh, axis, n_cos, cfg.heads)], axis)
    else:
        qh, kh = _apply_norm(qh, kh, cfg)
    scores = score(variant, qh, kh, cfg, params.additive)
    out = merge_heads(attend(scores, vh))
    return T.matmul(out, params.w_o)
