"""Transformer encoder and decoder blocks (post-norm)."""

from __future__ import annotations

import numpy as np

from msct.errors import ShapeError, UsageError
from msct.layers.attention import AttentionConfig, MultiHeadAttention
from msct.layers.module import LayerNorm, Linear, Module
from msct.tensor import ops
from msct.tensor.tensor import Tensor

FF_RATIO = 4


class FeedForward(Module):
    """Linear -> ReLU -> Linear."""

    def __init__(self, d_h: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d_h, d_ff, rng)
        self.outer = Linear(d_ff, d_h, rng)

    def __call__(self, alpha: Tensor) -> Tensor:
        return self.outer(ops.relu(self.inner(alpha)))


def add_norm(alpha: Tensor, sublayer_out: Tensor, norm: LayerNorm) -> Tensor:
    if alpha.shape != sublayer_out.shape:
        raise ShapeError("add_norm", alpha.shape, sublayer_out.shape)
    return norm(ops.add(alpha, sublayer_out))


class EncoderBlock(Module):
    """Masked self-attention, Add&Norm, feed-forward, Add&Norm."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, d_ff: int | None = None):
        self.cfg = cfg
        self.self_attention = MultiHeadAttention(cfg, rng)
        self.norm_attention = LayerNorm(cfg.d_h)
        self.feed_forward = FeedForward(cfg.d_h, d_ff or FF_RATIO * cfg.d_h, rng)
        self.norm_output = LayerNorm(cfg.d_h)

    def _drop(self, x: Tensor, rng) -> Tensor:
        return ops.variational_dropout(x, self.cfg.dropout, self.training, rng)

    def __call__(self, h: Tensor, rng=None) -> Tensor:
        attended = self._drop(self.self_attention(h, causal=True, rng=rng), rng)
        alpha = add_norm(h, attended, self.norm_attention)
        return add_norm(alpha, self._drop(self.feed_forward(alpha), rng), self.norm_output)


class DecoderBlock(EncoderBlock):
    """Encoder block with cross-attention on the encoder representation inserted
    between self-attention and the feed-forward layer."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, d_ff: int | None = None):
        super().__init__(cfg, rng, d_ff)
        self.cross_attention = MultiHeadAttention(cfg, rng)
        self.norm_cross = LayerNorm(cfg.d_h)

    def __call__(self, h: Tensor, phi: Tensor | None = None, key_mask: np.ndarray | None = None, rng=None) -> Tensor:
        if phi is None:
            raise UsageError("decoder_block needs the encoder representation")
        attended = self._drop(self.self_attention(h, causal=True, rng=rng), rng)
        alpha = add_norm(h, attended, self.norm_attention)
        crossed = self._drop(
            self.cross_attention(alpha, context=phi, key_mask=key_mask, causal=False, rng=rng), rng
        )
        beta = add_norm(alpha, crossed, self.norm_cross)
        return add_norm(beta, self._drop(self.feed_forward(beta), rng), self.norm_output)


def encoder_block(h: Tensor, block: EncoderBlock, rng=None) -> Tensor:
    return block(h, rng=rng)


def decoder_block(h: Tensor, phi: Tensor | None, block: DecoderBlock, key_mask=None, rng=None) -> Tensor:
    return block(h, phi, key_mask=key_mask, rng=rng)
