"""KV-cache geometry: fragments, RoPE alignment and offsets."""

from kvcomm.geometry.fragments import (
    GEOMETRY_EPS,
    KVFragment,
    KVOffset,
    SegmentKind,
    SegmentSpan,
    apply_offset,
    concat_fragments,
    max_abs_difference,
    measure_offset,
    shift_positions,
    slice_cache,
)

__all__ = [
    "GEOMETRY_EPS",
    "KVFragment",
    "KVOffset",
    "SegmentKind",
    "SegmentSpan",
    "apply_offset",
    "concat_fragments",
    "max_abs_difference",
    "measure_offset",
    "shift_positions",
    "slice_cache",
]
