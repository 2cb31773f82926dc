"""KV fragments with absolute-position provenance, and offset algebra.

Keys are stored rotated at their absolute positions. Offsets live in the
frame of the base fragment they were measured against, so a stored offset
can be replayed at any target position with a single re-rotation.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from kvcomm.errors import GeometryError
from kvcomm.model.rope import rotate_by

# Single tolerance for every equality contract on fragments.
GEOMETRY_EPS = 1e-6


class SegmentKind(Enum):
    """Kind of a template segment inside an instantiated prompt."""

    PREFIX = "prefix"
    PLACEHOLDER = "placeholder"


@dataclass(frozen=True)
class SegmentSpan:
    """A contiguous range of an instantiated prompt.

    Attributes:
        start: Index of the first token.
        length: Number of tokens (may be zero).
        kind: Prefix or placeholder.
        slot: Slot index i (prefix p_i or placeholder phi_i).
    """

    start: int
    length: int
    kind: SegmentKind
    slot: int

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True, eq=False)
class KVFragment:
    """Per-layer keys and values for a run of consecutive positions.

    Attributes:
        keys: (L, H, N, d) keys rotated at start_position + i.
        values: (L, H, N, d) values, never rotated.
        start_position: Absolute position of the first row.
        rope_base: RoPE base used for the stored rotation.
    """

    keys: np.ndarray
    values: np.ndarray
    start_position: int = 0
    rope_base: float = 10000.0

    def __post_init__(self) -> None:
        if self.keys.ndim != 4 or self.keys.shape != self.values.shape:
            raise GeometryError(
                f"keys/values must share a 4-d shape, got {self.keys.shape} "
                f"and {self.values.shape}"
            )

    @property
    def length(self) -> int:
        return self.keys.shape[2]

    @property
    def num_layers(self) -> int:
        return self.keys.shape[0]

    @property
    def end_position(self) -> int:
        return self.start_position + self.length

    def nbytes(self) -> int:
        return self.keys.nbytes + self.values.nbytes

    @classmethod
    def empty(
        cls,
        num_layers: int,
        num_heads: int,
        head_dim: int,
        start_position: int = 0,
        rope_base: float = 10000.0,
    ) -> "KVFragment":
        """Zero-length fragment starting at ``start_position``."""
        shape = (num_layers, num_heads, 0, head_dim)
        return cls(np.zeros(shape), np.zeros(shape), start_position, rope_base)


@dataclass(frozen=True, eq=False)
class KVOffset:
    """Key/value deviation of a fragment from its base, in the base frame."""

    delta_keys: np.ndarray
    delta_values: np.ndarray
    base_start_position: int = 0

    @property
    def length(self) -> int:
        return self.delta_keys.shape[2]

    def truncate(self, length: int) -> "KVOffset":
        """First ``length`` positions of the offset."""
        if length > self.length:
            raise GeometryError(
                f"Cannot truncate offset of length {self.length} to {length}"
            )
        return KVOffset(
            self.delta_keys[:, :, :length],
            self.delta_values[:, :, :length],
            self.base_start_position,
        )

    def nbytes(self) -> int:
        return self.delta_keys.nbytes + self.delta_values.nbytes

    @classmethod
    def zeros_like(cls, base: KVFragment) -> "KVOffset":
        return cls(
            np.zeros_like(base.keys),
            np.zeros_like(base.values),
            base.start_position,
        )


def max_abs_difference(a: KVFragment, b: KVFragment) -> float:
    """Largest absolute key/value difference between two same-shape fragments."""
    if a.keys.shape != b.keys.shape:
        raise GeometryError(f"Shape mismatch: {a.keys.shape} vs {b.keys.shape}")
    if a.length == 0:
        return 0.0
    return float(
        max(np.max(np.abs(a.keys - b.keys)), np.max(np.abs(a.values - b.values)))
    )


def slice_cache(cache: KVFragment, span: SegmentSpan) -> KVFragment:
    """Copy the rows of ``span`` (indices relative to the fragment start).

    Raises:
        GeometryError: If the span falls outside the fragment.
    """
    if span.start < 0 or span.length < 0 or span.end > cache.length:
        raise GeometryError(
            f"Span [{span.start}, {span.end}) outside fragment of length "
            f"{cache.length}"
        )
    rows = slice(span.start, span.end)
    return KVFragment(
        cache.keys[:, :, rows].copy(),
        cache.values[:, :, rows].copy(),
        cache.start_position + span.start,
        cache.rope_base,
    )


def shift_positions(frag: KVFragment, new_start: int) -> KVFragment:
    """Re-rotate every key by R_(new_start - start); values are unchanged."""
    delta = new_start - frag.start_position
    return KVFragment(
        rotate_by(frag.keys, delta, frag.rope_base),
        frag.values.copy(),
        new_start,
        frag.rope_base,
    )


def _check_same_shape(real: KVFragment, base: KVFragment) -> None:
    if real.num_layers != base.num_layers:
        raise GeometryError(
            f"Layer count mismatch: {real.num_layers} vs {base.num_layers}"
        )
    if real.keys.shape != base.keys.shape:
        raise GeometryError(
            f"Fragment shape mismatch: {real.keys.shape} vs {base.keys.shape}"
        )


def measure_offset(real: KVFragment, base: KVFragment, align: bool = True) -> KVOffset:
    """Deviation of ``real`` from ``base`` in the base frame.

    Args:
        real: In-context fragment.
        base: Reference fragment of the same shape.
        align: De-rotate real keys to the base positions first. With
            ``align=False`` the raw (unrotated) key difference is returned,
            which is only meaningful for analysis.

    Raises:
        GeometryError: On length or layer mismatch.
    """
    _check_same_shape(real, base)
    real_keys = (
        rotate_by(real.keys, base.start_position - real.start_position, real.rope_base)
        if align
        else real.keys
    )
    return KVOffset(
        real_keys - base.keys,
        real.values - base.values,
        base.start_position,
    )


def apply_offset(base: KVFragment, delta: KVOffset, target_start: int) -> KVFragment:
    """Add ``delta`` to ``base`` in the base frame, then rotate to ``target_start``.

    Raises:
        GeometryError: If the offset length differs from the base length.
    """
    if delta.delta_keys.shape != base.keys.shape:
        raise GeometryError(
            f"Offset shape {delta.delta_keys.shape} does not match base "
            f"{base.keys.shape}"
        )
    keys = base.keys + delta.delta_keys
    return KVFragment(
        rotate_by(keys, target_start - base.start_position, base.rope_base),
        base.values + delta.delta_values,
        target_start,
        base.rope_base,
    )


def concat_fragments(parts: list[KVFragment]) -> KVFragment:
    """Join position-contiguous fragments into one.

    Raises:
        GeometryError: If the list is empty or two parts leave a gap or overlap.
    """
    if not parts:
        raise GeometryError("concat_fragments needs at least one part")
    for previous, current in zip(parts, parts[1:]):
        if current.start_position != previous.end_position:
            raise GeometryError(
                f"Fragments not contiguous: part ends at {previous.end_position}, "
                f"next starts at {current.start_position}"
            )
    if len(parts) == 1:
        return parts[0]
    return KVFragment(
        np.concatenate([p.keys for p in parts], axis=2),
        np.concatenate([p.values for p in parts], axis=2),
        parts[0].start_position,
        parts[0].rope_base,
    )
