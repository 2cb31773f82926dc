"""Offset interpolation for placeholder and prefix segments."""

import numpy as np

from kvcomm.anchors.models import Anchor
from kvcomm.errors import GeometryError, MissingOffsetError
from kvcomm.geometry.fragments import KVFragment, KVOffset, apply_offset


def _offsets(
    anchors: tuple[Anchor, ...] | list[Anchor],
    agent_id: str,
    slot: int,
    kind: str,
) -> list[KVOffset]:
    found = []
    for anchor in anchors:
        if kind == "placeholder":
            table = anchor.placeholder_offsets
        else:
            table = anchor.prefix_offsets
        offset = table.get((agent_id, slot))
        if offset is None:
            raise MissingOffsetError(
                f"Anchor {anchor.anchor_id} has no {kind} offset for "
                f"agent {agent_id!r} slot {slot}"
            )
        found.append(offset)
    return found


def _check_weights(weights: np.ndarray, count: int, axis_name: str) -> None:
    if weights.shape[-1] != count:
        raise GeometryError(
            f"{axis_name} weights cover {weights.shape[-1]} anchors, expected {count}"
        )


def approximate_placeholder_kv(
    base: KVFragment,
    anchors: tuple[Anchor, ...] | list[Anchor],
    per_position_weights: np.ndarray,
    agent_id: str,
    slot: int,
    target_start: int,
) -> KVFragment:
    """Interpolate the in-context KV of a placeholder sample.

    Each anchor's placeholder offset for (agent, slot) is truncated to the
    sample length and mixed per position with ``per_position_weights``; the
    mix is added to ``base`` and keys are re-rotated to ``target_start``.

    Args:
        base: Standalone KV of the sample at position 0.
        anchors: Matched anchors.
        per_position_weights: (L_phi, n) weights.
        agent_id: Consuming agent.
        slot: Placeholder slot in the agent's template.
        target_start: Absolute position of the placeholder in the prompt.

    Raises:
        MissingOffsetError: If an anchor lacks the offset.
        GeometryError: On weight or length mismatch.
    """
    length = base.length
    stored = _offsets(anchors, agent_id, slot, "placeholder")
    offsets = [o.truncate(length) for o in stored]
    _check_weights(per_position_weights, len(offsets), "Per-position")
    if per_position_weights.shape[0] != length:
        raise GeometryError(
            f"Per-position weights cover {per_position_weights.shape[0]} positions, "
            f"sample has {length}"
        )
    if not offsets:
        return apply_offset(base, KVOffset.zeros_like(base), target_start)
    # (n, L, H, N, d) weighted along anchors, per position N
    w = per_position_weights.T[:, None, None, :, None]
    delta_keys = np.sum(w * np.stack([o.delta_keys for o in offsets]), axis=0)
    delta_values = np.sum(w * np.stack([o.delta_values for o in offsets]), axis=0)
    return apply_offset(
        base, KVOffset(delta_keys, delta_values, base.start_position), target_start
    )


def approximate_prefix_kv(
    prefix_base: KVFragment,
    anchors: tuple[Anchor, ...] | list[Anchor],
    scalar_weights: np.ndarray,
    agent_id: str,
    slot: int,
    target_start: int,
) -> KVFragment:
    """Interpolate the KV of the prefix segment that follows a placeholder.

    Raises:
        MissingOffsetError: If an anchor lacks the offset.
        GeometryError: If an offset length differs from the prefix length.
    """
    offsets = _offsets(anchors, agent_id, slot, "prefix")
    _check_weights(scalar_weights, len(offsets), "Scalar")
    for anchor, offset in zip(anchors, offsets):
        if offset.length != prefix_base.length:
            raise GeometryError(
                f"Prefix offset of anchor {anchor.anchor_id} has length "
                f"{offset.length}, prefix segment has {prefix_base.length}"
            )
    if not offsets:
        return apply_offset(prefix_base, KVOffset.zeros_like(prefix_base), target_start)
    w = np.asarray(scalar_weights)[:, None, None, None, None]
    delta_keys = np.sum(w * np.stack([o.delta_keys for o in offsets]), axis=0)
    delta_values = np.sum(w * np.stack([o.delta_values for o in offsets]), axis=0)
    return apply_offset(
        prefix_base,
        KVOffset(delta_keys, delta_values, prefix_base.start_position),
        target_start,
    )
