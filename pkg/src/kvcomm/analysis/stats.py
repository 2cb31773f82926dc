"""Rank statistics and per-layer fragment similarity."""

import logging
from collections.abc import Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)

# Distances below this count as exactly zero.
ZERO_DISTANCE = 1e-9


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman rank correlation with average ranks for ties.

    Examples:
        >>> spearman([1, 2, 3, 4], [10, 30, 20, 40])
        0.8

    Returns:
        rho in [-1, 1], or None when either input is constant.

    Raises:
        ValueError: If the inputs differ in length or have fewer than 2 items.
    """
    if len(x) != len(y):
        raise ValueError(f"Inputs differ in length: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("spearman needs at least 2 observations")
    rx = rankdata(np.asarray(x, dtype=np.float64))
    ry = rankdata(np.asarray(y, dtype=np.float64))
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = float(np.sqrt(np.sum(rx * rx) * np.sum(ry * ry)))
    if denom == 0.0:
        logger.warning("Spearman correlation undefined for constant input")
        return None
    rho = float(np.sum(rx * ry) / denom)
    return round(min(1.0, max(-1.0, rho)), 12)


def split_bins(values: np.ndarray, bin_count: int) -> list[np.ndarray]:
    """Split an ordered array into ``bin_count`` near-equal contiguous bins."""
    if bin_count < 1:
        raise ValueError(f"bin_count must be >= 1, got {bin_count}")
    return list(np.array_split(values, bin_count))


def bin_labels(bin_count: int) -> list[str]:
    """``near``/``mid``/``far`` for three bins, ``bin_<i>`` otherwise."""
    if bin_count == 3:
        return ["near", "mid", "far"]
    return [f"bin_{i}" for i in range(bin_count)]


def mean_std(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return 0.0, 0.0
    return float(np.mean(values)), float(np.std(values))


def _token_rows(tensor: np.ndarray) -> np.ndarray:
    """(H, N, d) -> (N, H*d)."""
    return tensor.transpose(1, 0, 2).reshape(tensor.shape[1], tensor.shape[0] * tensor.shape[2])


def _row_cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dots = np.sum(a * b, axis=1)
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    same = np.all(a == b, axis=1)
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return np.where(same, 1.0, cos)


def similarity_by_layer(
    approx_keys: np.ndarray,
    approx_values: np.ndarray,
    dense_keys: np.ndarray,
    dense_values: np.ndarray,
) -> list[dict[str, float]]:
    """Mean per-token cosine similarity and l2 error, per layer.

    Args:
        approx_keys: (L, H, N, d) approximated keys; the other arrays match.

    Returns:
        One dict per layer with key_cosine, key_l2, value_cosine, value_l2.
    """
    rows = []
    for layer in range(approx_keys.shape[0]):
        entry: dict[str, float] = {"layer": layer}
        for name, approx, dense in (
            ("key", approx_keys[layer], dense_keys[layer]),
            ("value", approx_values[layer], dense_values[layer]),
        ):
            a, d = _token_rows(approx), _token_rows(dense)
            if a.shape[0] == 0:
                entry[f"{name}_cosine"], entry[f"{name}_l2"] = 1.0, 0.0
                continue
            entry[f"{name}_cosine"] = float(np.mean(_row_cosines(a, d)))
            entry[f"{name}_l2"] = float(np.mean(np.linalg.norm(a - d, axis=1)))
        rows.append(entry)
    return rows
