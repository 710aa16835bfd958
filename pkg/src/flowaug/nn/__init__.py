"""Minimal numpy neural-network substrate with hand-written backward passes."""

from .archive import load_archive, save_archive
from .layers import (
    LSTM,
    Dense,
    Dropout,
    Embedding,
    EncoderBlock,
    FeedForward,
    GELU,
    Layer,
    LayerNorm,
    MaskedMeanPool,
    MultiHeadSelfAttention,
    Param,
    ReLU,
    Sequential,
    SparseOneHotDense,
    log_softmax,
    positional_encoding,
    softmax,
    softmax_cross_entropy,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "LSTM",
    "Adam",
    "AdamState",
    "Dense",
    "Dropout",
    "Embedding",
    "EncoderBlock",
    "FeedForward",
    "GELU",
    "Layer",
    "LayerNorm",
    "MaskedMeanPool",
    "MultiHeadSelfAttention",
    "Param",
    "ReLU",
    "Sequential",
    "SparseOneHotDense",
    "adam_step",
    "load_archive",
    "log_softmax",
    "positional_encoding",
    "save_archive",
    "softmax",
    "softmax_cross_entropy",
]
