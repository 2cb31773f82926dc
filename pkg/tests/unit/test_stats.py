"""Unit tests for rank statistics and per-layer similarity."""

import numpy as np
import pytest

from kvcomm.analysis.stats import (
    bin_labels,
    mean_std,
    similarity_by_layer,
    spearman,
    split_bins,
)


class TestSpearman:
    """Tests for spearman."""

    def test_monotone_increasing(self):
        assert spearman([1, 2, 3], [4, 5, 9]) == 1.0

    def test_monotone_decreasing(self):
        assert spearman([1, 2, 3, 4], [9, 7, 3, 1]) == -1.0

    def test_known_value(self):
        assert spearman([1, 2, 3, 4], [10, 30, 20, 40]) == pytest.approx(0.8)

    def test_ties_use_average_ranks(self):
        rho = spearman([1, 1, 2, 3], [1, 2, 3, 4])
        assert 0.9 < rho < 1.0

    def test_constant_input_is_undefined(self, caplog):
        assert spearman([1, 1, 1], [1, 2, 3]) is None
        assert "undefined" in caplog.text

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="differ in length"):
            spearman([1, 2], [1, 2, 3])

    def test_too_few(self):
        with pytest.raises(ValueError, match="at least 2"):
            spearman([1], [1])


class TestBins:
    """Tests for split_bins, bin_labels and mean_std."""

    def test_split_near_equal(self):
        bins = split_bins(np.arange(10), 3)
        assert [len(b) for b in bins] == [4, 3, 3]
        np.testing.assert_array_equal(np.concatenate(bins), np.arange(10))

    def test_split_invalid(self):
        with pytest.raises(ValueError):
            split_bins(np.arange(3), 0)

    def test_labels(self):
        assert bin_labels(3) == ["near", "mid", "far"]
        assert bin_labels(2) == ["bin_0", "bin_1"]

    def test_mean_std_empty(self):
        assert mean_std(np.array([])) == (0.0, 0.0)

    def test_mean_std(self):
        assert mean_std(np.array([1.0, 3.0])) == (2.0, 1.0)


class TestSimilarityByLayer:
    """Tests for similarity_by_layer."""

    def test_identical_tensors(self):
        rng = np.random.default_rng(0)
        keys = rng.normal(size=(2, 2, 3, 4))
        values = rng.normal(size=(2, 2, 3, 4))
        rows = similarity_by_layer(keys, values, keys, values)
        assert len(rows) == 2
        for row in rows:
            assert row["key_cosine"] == 1.0
            assert row["value_l2"] == 0.0

    def test_opposite_tensors(self):
        keys = np.ones((1, 1, 2, 4))
        rows = similarity_by_layer(keys, keys, -keys, keys)
        assert rows[0]["key_cosine"] == pytest.approx(-1.0)
        assert rows[0]["key_l2"] == pytest.approx(4.0)
        assert rows[0]["value_cosine"] == 1.0

    def test_zero_rows_equal_are_similar(self):
        zeros = np.zeros((1, 1, 2, 4))
        rows = similarity_by_layer(zeros, zeros, zeros, zeros)
        assert rows[0]["key_cosine"] == 1.0

    def test_empty_sequence(self):
        empty = np.zeros((1, 1, 0, 4))
        rows = similarity_by_layer(empty, empty, empty, empty)
        assert rows[0] == {
            "layer": 0,
            "key_cosine": 1.0,
            "key_l2": 0.0,
            "value_cosine": 1.0,
            "value_l2": 0.0,
        }
