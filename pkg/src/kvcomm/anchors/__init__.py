"""Anchor pools, shareability prediction and offset interpolation."""

from kvcomm.anchors.approximation import (
    approximate_placeholder_kv,
    approximate_prefix_kv,
)
from kvcomm.anchors.dump import dump_pools, summarize_pool
from kvcomm.anchors.models import (
    DEFAULT_CAPACITY,
    Anchor,
    AnchorPool,
    Verdict,
    insert_anchor,
    record_access,
)
from kvcomm.anchors.prediction import MatchResult, predict_shareability
from kvcomm.anchors.weighting import (
    AnchorWeights,
    WeightingMode,
    anchor_weights,
    entropy,
)

__all__ = [
    "Anchor",
    "AnchorPool",
    "AnchorWeights",
    "DEFAULT_CAPACITY",
    "MatchResult",
    "Verdict",
    "WeightingMode",
    "anchor_weights",
    "approximate_placeholder_kv",
    "approximate_prefix_kv",
    "dump_pools",
    "entropy",
    "insert_anchor",
    "predict_shareability",
    "record_access",
    "summarize_pool",
]
