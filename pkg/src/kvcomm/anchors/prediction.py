"""Shareability prediction for a placeholder sample against an anchor pool."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from kvcomm.anchors.models import Anchor, AnchorPool, Verdict
from kvcomm.anchors.weighting import WeightingMode, anchor_weights, entropy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchResult:
    """Verdict of the shareability test.

    Attributes:
        verdict: Shareable or NewAnchor.
        anchor_ids: Ids of the qualifying anchors, pool order.
        per_position_weights: (L_phi, |matched|) weights, rows on the simplex.
        scalar_weights: (|matched|,) per-anchor weights.
        entropy: Entropy of the scalar weights (0.0 when not computed).
        threshold: gamma * log|matched|.
        reason: Short machine-readable reason for the verdict.
        anchors: The matched Anchor objects, same order as ``anchor_ids``.
    """

    verdict: Verdict
    anchor_ids: tuple[str, ...] = ()
    per_position_weights: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    scalar_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    entropy: float = 0.0
    threshold: float = 0.0
    reason: str = ""
    anchors: tuple[Anchor, ...] = ()

    @property
    def shareable(self) -> bool:
        return self.verdict is Verdict.SHAREABLE


def _new_anchor(reason: str) -> MatchResult:
    return MatchResult(Verdict.NEW_ANCHOR, reason=reason)


def predict_shareability(
    sample_embeddings: np.ndarray,
    pool: AnchorPool,
    gamma: float,
    requester: tuple[str, int] | None = None,
    mode: WeightingMode = WeightingMode.L2,
) -> MatchResult:
    """Decide whether a sample can reuse offsets interpolated from ``pool``.

    The qualifying set holds anchors at least as long as the sample; when a
    ``requester`` (agent id, slot) is given, anchors must also carry both
    offsets for it. The verdict is NewAnchor when gamma is 0, the pool is
    empty, the sample is longer than every anchor, nothing qualifies, or the
    entropy of the scalar weights exceeds ``gamma * log|qualifying|``.

    Args:
        sample_embeddings: (L_phi, D) embeddings of the sample.
        pool: Anchor pool of the placeholder.
        gamma: Entropy threshold factor in [0, 1].
        requester: (agent id, slot) whose offsets must be present.
        mode: Weighting variant.

    Returns:
        MatchResult with weights populated for Shareable verdicts.

    Raises:
        ValueError: If gamma is outside [0, 1].
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    if gamma == 0.0:
        return _new_anchor("sharing_disabled")

    anchors = list(pool.anchors)
    if not anchors:
        return _new_anchor("empty_pool")
    length = sample_embeddings.shape[0]
    if length > max(a.length for a in anchors):
        return _new_anchor("sample_too_long")

    qualifying = [a for a in anchors if a.length >= length]
    if requester is not None:
        qualifying = [a for a in qualifying if a.has_offsets(*requester)]
    if not qualifying:
        return _new_anchor("no_complete_anchor")

    weights = anchor_weights(sample_embeddings, qualifying, mode)
    h = entropy(weights.scalar)
    threshold = gamma * math.log(len(qualifying))
    exceeded = h > threshold
    verdict = Verdict.NEW_ANCHOR if exceeded else Verdict.SHAREABLE
    logger.debug(
        "Pool %s: %d candidates, H=%.4f threshold=%.4f -> %s",
        pool.name,
        len(qualifying),
        h,
        threshold,
        verdict.value,
    )
    return MatchResult(
        verdict=verdict,
        anchor_ids=tuple(a.anchor_id for a in qualifying),
        per_position_weights=weights.per_position,
        scalar_weights=weights.scalar,
        entropy=h,
        threshold=threshold,
        reason="entropy_above_threshold" if exceeded else "entropy_within_threshold",
        anchors=tuple(qualifying),
    )
