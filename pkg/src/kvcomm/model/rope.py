"""Rotary position embedding over interleaved (2i, 2i+1) pairs."""

import numpy as np


def inverse_frequencies(head_dim: int, base: float = 10000.0) -> np.ndarray:
    """theta^(-2i/d) for i = 0 .. d/2 - 1."""
    return base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)


def apply_rope(
    x: np.ndarray, positions: np.ndarray, base: float = 10000.0
) -> np.ndarray:
    """Rotate the last axis of ``x`` by per-row positions.

    Args:
        x: Array of shape (..., N, d) with d even.
        positions: Integer (or real) positions of shape (N,). Negative
            values rotate backwards.
        base: RoPE frequency base.

    Returns:
        Rotated float64 array with the shape of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inverse_frequencies(
        x.shape[-1], base
    )
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rotate_by(x: np.ndarray, delta: int, base: float = 10000.0) -> np.ndarray:
    """Rotate every row of ``x`` (shape (..., N, d)) by the same offset."""
    if delta == 0:
        return np.array(x, dtype=np.float64, copy=True)
    positions = np.full(x.shape[-2], delta, dtype=np.float64)
    return apply_rope(x, positions, base)


def rope_rotate(vec: np.ndarray, position: int, base: float = 10000.0) -> np.ndarray:
    """Rotate a single d-dim vector to ``position``; R_0 is the identity."""
    vec = np.asarray(vec, dtype=np.float64)
    return apply_rope(vec[None, :], np.array([position]), base)[0]
