"""Embedding-distance weights over candidate anchors."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from kvcomm.anchors.models import Anchor


class WeightingMode(Enum):
    """How candidate anchors are weighted.

    ``L2`` is the default softmax over negative distances; ``COSINE`` and
    ``NEAREST`` are comparison variants.
    """

    L2 = "l2"
    COSINE = "cosine"
    NEAREST = "nearest"


@dataclass(frozen=True)
class AnchorWeights:
    """Per-position (L_phi, n) and per-anchor (n,) weights; rows sum to 1."""

    per_position: np.ndarray
    scalar: np.ndarray


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / np.sum(weights, axis=axis, keepdims=True)


def _one_hot_argmin(x: np.ndarray, axis: int = -1) -> np.ndarray:
    out = np.zeros_like(x)
    index = np.expand_dims(np.argmin(x, axis=axis), axis)
    np.put_along_axis(out, index, 1.0, axis=axis)
    return out


def entropy(weights: np.ndarray) -> float:
    """Shannon entropy -sum(w log w), treating 0 log 0 as 0."""
    positive = weights[weights > 0]
    return float(-np.sum(positive * np.log(positive)))


def position_distances(sample: np.ndarray, candidates: list[Anchor]) -> np.ndarray:
    """(L_phi, n) l2 distances between sample rows and truncated anchor rows."""
    length = sample.shape[0]
    stacked = np.stack([a.embeddings[:length] for a in candidates], axis=1)
    return np.linalg.norm(stacked - sample[:, None, :], axis=-1)


def _position_cosines(sample: np.ndarray, candidates: list[Anchor]) -> np.ndarray:
    length = sample.shape[0]
    stacked = np.stack([a.embeddings[:length] for a in candidates], axis=1)
    dots = np.sum(stacked * sample[:, None, :], axis=-1)
    norms = np.linalg.norm(stacked, axis=-1) * np.linalg.norm(sample, axis=-1)[:, None]
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


def anchor_weights(
    sample_embeddings: np.ndarray,
    candidates: list[Anchor],
    mode: WeightingMode = WeightingMode.L2,
) -> AnchorWeights:
    """Weights of each candidate anchor for a placeholder sample.

    Anchor embeddings are truncated to the sample's first L_phi positions.

    Args:
        sample_embeddings: (L_phi, D) embeddings of the sample.
        candidates: Anchors with length >= L_phi.
        mode: Weighting variant.

    Returns:
        AnchorWeights with per-position softmax over anchors of the negative
        distance, and per-anchor softmax of the negative mean distance.

    Raises:
        ValueError: If ``candidates`` is empty or an anchor is too short.
    """
    if not candidates:
        raise ValueError("anchor_weights needs at least one candidate")
    length = sample_embeddings.shape[0]
    short = [a.anchor_id for a in candidates if a.length < length]
    if short:
        raise ValueError(f"Anchors shorter than the sample: {short}")
    n = len(candidates)
    if length == 0:
        uniform = np.full(n, 1.0 / n)
        return AnchorWeights(np.zeros((0, n)), uniform)

    if mode is WeightingMode.COSINE:
        similarity = _position_cosines(sample_embeddings, candidates)
        return AnchorWeights(
            softmax(similarity, axis=1), softmax(similarity.mean(axis=0))
        )
    distances = position_distances(sample_embeddings, candidates)
    if mode is WeightingMode.NEAREST:
        return AnchorWeights(
            _one_hot_argmin(distances, axis=1),
            _one_hot_argmin(distances.mean(axis=0)),
        )
    return AnchorWeights(softmax(-distances, axis=1), softmax(-distances.mean(axis=0)))
