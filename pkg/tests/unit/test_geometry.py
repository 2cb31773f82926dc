"""Unit tests for KV fragments and offset algebra."""

import numpy as np
import pytest

from kvcomm.errors import GeometryError
from kvcomm.geometry import (
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
from kvcomm.model.rope import apply_rope


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def random_fragment(rng, length, start, layers=2, heads=2, head_dim=8):
    shape = (layers, heads, length, head_dim)
    raw = rng.normal(size=shape)
    keys = apply_rope(raw, np.arange(start, start + length))
    return KVFragment(keys, rng.normal(size=shape), start)


class TestKVFragment:
    """Tests for fragment construction and helpers."""

    def test_shape_mismatch_rejected(self):
        with pytest.raises(GeometryError, match="4-d shape"):
            KVFragment(np.zeros((1, 1, 2, 4)), np.zeros((1, 1, 3, 4)))

    def test_properties(self, rng):
        fragment = random_fragment(rng, 5, 10)
        assert fragment.length == 5
        assert fragment.end_position == 15
        assert fragment.num_layers == 2
        assert fragment.nbytes() == 2 * 2 * 2 * 5 * 8 * 8

    def test_empty(self):
        fragment = KVFragment.empty(2, 3, 4, start_position=7)
        assert fragment.length == 0
        assert fragment.start_position == 7


class TestOffsets:
    """Tests for measure_offset and apply_offset."""

    def test_round_trip(self, rng):
        for _ in range(100):
            length = int(rng.integers(1, 6))
            real = random_fragment(rng, length, int(rng.integers(0, 500)))
            base = random_fragment(rng, length, int(rng.integers(0, 500)))
            offset = measure_offset(real, base)
            rebuilt = apply_offset(base, offset, real.start_position)
            assert max_abs_difference(rebuilt, real) < 1e-6
            assert rebuilt.start_position == real.start_position

    def test_offset_of_self_is_zero(self, rng):
        fragment = random_fragment(rng, 3, 4)
        offset = measure_offset(fragment, fragment)
        assert np.all(offset.delta_keys == 0)
        assert np.all(offset.delta_values == 0)

    def test_shifted_copy_has_zero_aligned_offset(self, rng):
        base = random_fragment(rng, 4, 0)
        moved = shift_positions(base, 30)
        offset = measure_offset(moved, base)
        assert np.max(np.abs(offset.delta_keys)) < 1e-9

    def test_unaligned_offset_keeps_rotation(self, rng):
        base = random_fragment(rng, 4, 0)
        moved = shift_positions(base, 30)
        offset = measure_offset(moved, base, align=False)
        assert np.max(np.abs(offset.delta_keys)) > 1e-3

    def test_length_mismatch(self, rng):
        with pytest.raises(GeometryError, match="shape mismatch"):
            measure_offset(random_fragment(rng, 3, 0), random_fragment(rng, 4, 0))

    def test_layer_mismatch(self, rng):
        with pytest.raises(GeometryError, match="Layer count mismatch"):
            measure_offset(
                random_fragment(rng, 3, 0, layers=1), random_fragment(rng, 3, 0)
            )

    def test_apply_rejects_wrong_length(self, rng):
        base = random_fragment(rng, 3, 0)
        offset = KVOffset.zeros_like(random_fragment(rng, 2, 0))
        with pytest.raises(GeometryError, match="does not match base"):
            apply_offset(base, offset, 0)

    def test_zero_offset_only_rotates(self, rng):
        base = random_fragment(rng, 3, 2)
        out = apply_offset(base, KVOffset.zeros_like(base), 9)
        assert max_abs_difference(out, shift_positions(base, 9)) < 1e-12

    def test_truncate(self, rng):
        offset = KVOffset.zeros_like(random_fragment(rng, 5, 0))
        assert offset.truncate(3).length == 3
        with pytest.raises(GeometryError, match="Cannot truncate"):
            offset.truncate(6)


class TestSlicingAndConcat:
    """Tests for slice_cache, shift_positions and concat_fragments."""

    def test_slice_sets_absolute_start(self, rng):
        fragment = random_fragment(rng, 6, 10)
        part = slice_cache(fragment, SegmentSpan(2, 3, SegmentKind.PLACEHOLDER, 1))
        assert part.start_position == 12
        np.testing.assert_array_equal(part.keys, fragment.keys[:, :, 2:5])

    def test_slice_out_of_range(self, rng):
        fragment = random_fragment(rng, 4, 0)
        with pytest.raises(GeometryError, match="outside fragment"):
            slice_cache(fragment, SegmentSpan(2, 3, SegmentKind.PREFIX, 0))

    def test_shift_round_trip(self, rng):
        fragment = random_fragment(rng, 4, 5)
        back = shift_positions(shift_positions(fragment, 50), 5)
        assert max_abs_difference(back, fragment) < 1e-9

    def test_shift_keeps_values(self, rng):
        fragment = random_fragment(rng, 4, 5)
        shifted = shift_positions(fragment, 0)
        np.testing.assert_array_equal(shifted.values, fragment.values)

    def test_concat_contiguous(self, rng):
        a = random_fragment(rng, 2, 0)
        b = random_fragment(rng, 3, 2)
        joined = concat_fragments([a, b])
        assert joined.length == 5
        assert joined.start_position == 0
        np.testing.assert_array_equal(joined.values[:, :, 2:], b.values)

    def test_concat_gap_rejected(self, rng):
        with pytest.raises(GeometryError, match="not contiguous"):
            concat_fragments([random_fragment(rng, 2, 0), random_fragment(rng, 2, 3)])

    def test_concat_empty_rejected(self):
        with pytest.raises(GeometryError, match="at least one part"):
            concat_fragments([])

    def test_span_end(self):
        assert SegmentSpan(3, 4, SegmentKind.PREFIX, 0).end == 7

    def test_max_abs_difference_shape_mismatch(self, rng):
        with pytest.raises(GeometryError, match="Shape mismatch"):
            max_abs_difference(random_fragment(rng, 2, 0), random_fragment(rng, 3, 0))
