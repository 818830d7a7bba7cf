from msct.layers.attention import (
    AttentionConfig,
    MultiHeadAttention,
    positional_encoding,
    scaled_dot_attention,
)
from msct.layers.module import LayerNorm, Linear, Module
from msct.layers.recurrent import CELLS, GRU, LSTM, ElmanRNN, lstm_forward
from msct.layers.transformer import (
    DecoderBlock,
    EncoderBlock,
    FeedForward,
    add_norm,
    decoder_block,
    encoder_block,
)

__all__ = [
    "AttentionConfig",
    "CELLS",
    "DecoderBlock",
    "ElmanRNN",
    "EncoderBlock",
    "FeedForward",
    "GRU",
    "LSTM",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "add_norm",
    "decoder_block",
    "encoder_block",
    "lstm_forward",
    "positional_encoding",
    "scaled_dot_attention",
]
