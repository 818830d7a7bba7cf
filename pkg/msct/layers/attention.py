"""Scaled dot-product and multi-head attention, plus absolute positional encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msct.errors import ConfigError, ShapeError
from msct.layers.module import Linear, Module
from msct.tensor import ops
from msct.tensor.tensor import Tensor

PE_BASE = 1000.0


@dataclass
class AttentionConfig:
    d_h: int
    d_a: int | None = None
    heads: int = 2
    causal: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_a is None:
            self.d_a = self.d_h
        for name in ("d_h", "d_a", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"attention.{name}", "must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("attention.dropout", f"rate must lie in [0, 1), got {self.dropout}")


def positional_encoding(
    t_max: int, d_h: int, base: float = PE_BASE, offset: int = 0
) -> np.ndarray:
    """Absolute sinusoidal encoding of rows ``offset .. offset + t_max - 1``.

    Column ``c`` uses frequency pair ``c // 2``: sine on even columns, cosine on
    odd ones, so an odd last column still gets a cosine.
    """
    positions = np.arange(offset, offset + t_max, dtype=np.float64)[:, None]
    pairs = np.arange(d_h) // 2
    angles = positions / base ** (2.0 * pairs / d_h)
    return np.where(np.arange(d_h) % 2 == 0, np.sin(angles), np.cos(angles))


def causal_mask(len_q: int, len_k: int) -> np.ndarray:
    """Query ``i`` sees keys ``<= i + (len_k - len_q)``."""
    return np.tril(np.ones((len_q, len_k), dtype=bool), k=len_k - len_q)


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray | None = None,
    causal: bool = False,
    dropout: float = 0.0,
    rng=None,
) -> tuple[Tensor, Tensor]:
    """softmax(QK^T / sqrt(d_a)) V; returns the output and the attention weights.

    ``mask`` is boolean and broadcasts against ``(..., Lq, Lk)``; False entries
    get exactly zero weight.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError("scaled_dot_attention", q.shape, k.shape, detail="query/key width")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError("scaled_dot_attention", k.shape, v.shape, detail="key/value length")

    d_a = q.shape[-1]
    scores = ops.div(ops.matmul(q, ops.swapaxes(k, -1, -2)), np.sqrt(d_a))
    allowed = None
    if causal:
        allowed = causal_mask(q.shape[-2], k.shape[-2])
    if mask is not None:
        allowed = mask if allowed is None else np.logical_and(allowed, mask)
    if allowed is not None:
        scores = ops.where(np.broadcast_to(allowed, scores.shape), scores)
    weights = ops.softmax(scores, axis=-1)
    if dropout > 0.0 and rng is not None:
        # one mask per head and key, shared across query positions
        weights = ops.variational_dropout(weights, dropout, True, rng)
    return ops.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Per-head projections to width ``d_a`` (queries/keys) and ``d_h`` (values),
    concatenated to ``heads * d_h`` and projected back to ``d_h``."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.w_q = Linear(cfg.d_h, cfg.heads * cfg.d_a, rng)
        self.w_k = Linear(cfg.d_h, cfg.heads * cfg.d_a, rng)
        self.w_v = Linear(cfg.d_h, cfg.heads * cfg.d_h, rng)
        self.w_o = Linear(cfg.heads * cfg.d_h, cfg.d_h, rng)

    def _split(self, x: Tensor, width: int) -> Tensor:
        batch, length, _ = x.shape
        return ops.transpose(ops.reshape(x, (batch, length, self.cfg.heads, width)), (0, 2, 1, 3))

    def __call__(
        self,
        h: Tensor,
        context: Tensor | None = None,
        key_mask: np.ndarray | None = None,
        causal: bool | None = None,
        rng=None,
    ) -> Tensor:
        squeeze = h.ndim == 2
        if squeeze:
            h = ops.reshape(h, (1,) + h.shape)
            if context is not None and context.ndim == 2:
                context = ops.reshape(context, (1,) + context.shape)
        if h.shape[-1] != self.cfg.d_h:
            raise ShapeError("multi_head_attention", h.shape, (self.cfg.d_h,), detail="hidden width")
        if context is not None and context.shape[-1] != self.cfg.d_h:
            raise ShapeError("multi_head_attention", context.shape, (self.cfg.d_h,), detail="context width")

        source = h if context is None else context
        if causal is None:
            causal = self.cfg.causal and context is None
        q = self._split(self.w_q(h), self.cfg.d_a)
        k = self._split(self.w_k(source), self.cfg.d_a)
        v = self._split(self.w_v(source), self.cfg.d_h)
        dropout = self.cfg.dropout if self.training else 0.0
        heads, _ = scaled_dot_attention(q, k, v, mask=key_mask, causal=causal, dropout=dropout, rng=rng)

        batch, _, length, _ = heads.shape
        merged = ops.reshape(ops.transpose(heads, (0, 2, 1, 3)), (batch, length, self.cfg.heads * self.cfg.d_h))
        out = self.w_o(merged)
        return ops.reshape(out, out.shape[1:]) if squeeze else out
