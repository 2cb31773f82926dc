"""Toy RoPE transformer: config, weights, tokenizer and rotation.

The cache and forward passes live in ``kvcomm.model.cache`` and
``kvcomm.model.transformer``; they depend on ``kvcomm.geometry`` and are
imported from their modules directly.
"""

from kvcomm.model.config import ModelConfig
from kvcomm.model.rope import apply_rope, rope_rotate, rotate_by
from kvcomm.model.tokenizer import (
    BOS_ID,
    EOS_ID,
    TokenSequence,
    detokenize,
    encode,
    tokenize,
)
from kvcomm.model.weights import ModelWeights, dump_weights, init_weights, load_weights

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "ModelConfig",
    "ModelWeights",
    "TokenSequence",
    "apply_rope",
    "detokenize",
    "dump_weights",
    "encode",
    "init_weights",
    "load_weights",
    "rope_rotate",
    "rotate_by",
    "tokenize",
]
