"""Transformer modules for selection scoring and score reconstruction (torch autograd)."""

from .models import (
    FieldEmbedding,
    L2SModel,
    ModelConfig,
    S2LModel,
    embed_sequence,
    l2s_decode,
    l2s_nll,
    pad_tokens,
    s2l_scores,
)

__all__ = [
    "FieldEmbedding",
    "L2SModel",
    "ModelConfig",
    "S2LModel",
    "embed_sequence",
    "l2s_decode",
    "l2s_nll",
    "pad_tokens",
    "s2l_scores",
]
