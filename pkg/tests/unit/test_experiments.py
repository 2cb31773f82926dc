"""Unit tests for the proximity and offset-variance experiments."""

import numpy as np
import pytest

from kvcomm.analysis import (
    ExperimentConfig,
    kv_proximity_experiment,
    offset_proximity_experiment,
    offset_variance_experiment,
)
from kvcomm.analysis.experiments import random_prefix, sample_tokens, select_pairs
from kvcomm.errors import ConfigError
from kvcomm.model import ModelConfig
from kvcomm.model.transformer import Transformer


@pytest.fixture(scope="module")
def model():
    config = ModelConfig(num_layers=2, num_heads=2, head_dim=8, ffn_dim=32, seed=5)
    return Transformer.from_config(config)


@pytest.fixture
def small():
    return ExperimentConfig(
        token_count=16,
        pair_count=12,
        bin_count=3,
        prefix_count=3,
        prefix_length=4,
        sequence_length=3,
        seed=7,
    )


class TestExperimentConfig:
    """Tests for ExperimentConfig validation."""

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.sampled_tokens == 256
        assert cfg.pair_selection == "spread"
        assert cfg.to_dict()["layers"] == []

    def test_to_dict_leaves_out_threads(self):
        """Worker count is not echoed into run records."""
        a = ExperimentConfig(threads=1).to_dict()
        b = ExperimentConfig(threads=8).to_dict()
        assert "threads" not in a
        assert a == b

    @pytest.mark.parametrize(
        "kwargs,match",
        [
            ({"token_count": 1}, "token_count"),
            ({"pair_count": 2, "bin_count": 3}, "pair_count"),
            ({"token_count": 4, "pair_count": 7}, "available pairs"),
            ({"prefix_count": 1}, "prefix_count"),
            ({"sequence_length": 0}, "sequence_length"),
            ({"pair_selection": "farthest"}, "pair_selection"),
        ],
    )
    def test_invalid(self, kwargs, match):
        with pytest.raises(ConfigError, match=match):
            ExperimentConfig(**kwargs)

    def test_from_dict_unknown_field(self):
        with pytest.raises(ConfigError, match="Unknown experiment fields: bogus"):
            ExperimentConfig.from_dict({"bogus": 1})

    def test_from_dict_layers_tuple(self):
        assert ExperimentConfig.from_dict({"layers": [1]}).layers == (1,)

    def test_layers_out_of_range(self, model, small):
        cfg = ExperimentConfig.from_dict({**small.to_dict(), "layers": [5]})
        with pytest.raises(ConfigError, match="outside"):
            kv_proximity_experiment(model, cfg)


class TestSampling:
    """Tests for token, prefix and pair sampling."""

    def test_tokens_distinct(self):
        tokens = sample_tokens(np.random.default_rng(0), 50)
        assert len(set(tokens)) == 50

    def test_prefix_starts_with_bos(self):
        prefix = random_prefix(np.random.default_rng(0), 5)
        assert len(prefix) == 6
        assert prefix[0] == 256

    def test_pairs_ordered_by_distance(self, model):
        embeddings = model.embed(list(range(10)))
        pairs, distances = select_pairs(embeddings, 8)
        assert pairs.shape == (8, 2)
        assert np.all(np.diff(distances) >= 0)
        assert np.all(pairs[:, 0] < pairs[:, 1])

    def test_closest_pairs_are_nearest(self, model):
        embeddings = model.embed(list(range(10)))
        _, closest = select_pairs(embeddings, 8, "closest")
        _, every = select_pairs(embeddings, 45, "closest")
        np.testing.assert_array_equal(closest, every[:8])
        assert np.all(np.diff(closest) >= 0)

    def test_spread_covers_range(self, model):
        embeddings = model.embed(list(range(10)))
        _, spread = select_pairs(embeddings, 8, "spread")
        _, every = select_pairs(embeddings, 45, "closest")
        assert spread[0] == every[0]
        assert spread[-1] == every[-1]

    def test_unknown_selection(self, model):
        with pytest.raises(ConfigError, match="Unknown pair selection"):
            select_pairs(model.embed([1, 2, 3]), 2, "random")


class TestProximity:
    """Tests for the key/value and offset proximity experiments."""

    def test_report_shape(self, model, small):
        report = kv_proximity_experiment(model, small)
        assert report.layers == [0, 1]
        assert report.pair_count == 12
        assert report.bins == ["near", "mid", "far"]
        for layer in report.layers:
            assert len(report.key_bin_means[layer]) == 3
            rho = report.key_rho[layer]
            assert rho is None or -1.0 <= rho <= 1.0

    def test_rows_schema(self, model, small):
        rows = kv_proximity_experiment(model, small).rows()
        assert {tuple(row) for row in rows} == {
            ("experiment", "layer", "metric", "value")
        }
        metrics = {row["metric"] for row in rows if row["layer"] == 0}
        assert "key_spearman" in metrics
        assert "value_mean_distance_far" in metrics
        assert "key_spearman_closest" in metrics
        assert "value_spearman_spread" in metrics
        assert len(rows) == 2 * 2 * (1 + 3 + 2)

    @pytest.mark.parametrize("selection", ["spread", "closest"])
    def test_both_selections_reported(self, model, small, selection):
        cfg = ExperimentConfig.from_dict(
            {**small.to_dict(), "pair_selection": selection}
        )
        report = kv_proximity_experiment(model, cfg)
        assert report.pair_selection == selection
        assert set(report.selection_key_rho) == {"spread", "closest"}
        assert report.selection_key_rho[selection] == report.key_rho
        assert report.selection_value_rho[selection] == report.value_rho

    def test_deterministic(self, model, small):
        a = kv_proximity_experiment(model, small).rows()
        b = kv_proximity_experiment(model, small).rows()
        assert a == b

    def test_threads_match_sequential(self, model, small):
        threaded = ExperimentConfig.from_dict({**small.to_dict(), "threads": 3})
        a = offset_proximity_experiment(model, small).rows()
        b = offset_proximity_experiment(model, threaded).rows()
        assert a == b

    def test_layer_zero_offsets_undefined(self, model, small):
        """Offsets vanish at the first layer, so the correlation is undefined."""
        report = offset_proximity_experiment(model, small)
        assert report.key_rho[0] is None
        assert report.value_rho[0] is None
        assert report.key_bin_means[0] == [0.0, 0.0, 0.0]


class TestOffsetVariance:
    """Tests for offset_variance_experiment."""

    def test_identical_prefixes_have_no_spread(self, model, small):
        prefix = [256, 1, 2, 3]
        report = offset_variance_experiment(model, small, [prefix, prefix, prefix])
        for layer in report.layers:
            assert report.key_rotated[layer][1] < 1e-12
            assert report.value[layer][1] < 1e-12

    def test_rotation_shrinks_offsets(self, model, small):
        report = offset_variance_experiment(model, small)
        assert report.key_rotated[0][0] < 1e-9
        assert report.key_unrotated[0][0] > 1e-3

    def test_rows(self, model, small):
        rows = offset_variance_experiment(model, small).rows()
        metrics = [row["metric"] for row in rows if row["layer"] == 1]
        assert metrics == [
            "key_rotated_mean",
            "key_rotated_std",
            "key_unrotated_mean",
            "key_unrotated_std",
            "value_mean",
            "value_std",
        ]

    def test_too_few_prefixes(self, model, small):
        with pytest.raises(ConfigError, match="at least two"):
            offset_variance_experiment(model, small, [[256, 1]])

    def test_prefix_lengths_differ(self, model, small):
        with pytest.raises(ConfigError, match="same length"):
            offset_variance_experiment(model, small, [[256, 1], [256, 1, 2]])


class TestDefaultScaleProperties:
    """Per-layer properties of the experiments at the default scale."""

    @pytest.fixture(scope="class")
    def default_model(self):
        return Transformer.from_config(ModelConfig())

    @pytest.fixture(scope="class")
    def proximity(self, default_model):
        return kv_proximity_experiment(default_model, ExperimentConfig())

    @pytest.fixture(scope="class")
    def offset_proximity(self, default_model):
        return offset_proximity_experiment(default_model, ExperimentConfig())

    @staticmethod
    def assert_bins_ordered(means):
        near, mid, far = means
        assert near <= mid <= far

    def test_kv_distance_tracks_embedding_distance(self, proximity):
        assert proximity.layers == [0, 1]
        for layer in proximity.layers:
            assert proximity.key_rho[layer] > 0.3
            assert proximity.value_rho[layer] > 0.3

    def test_kv_bins_ordered(self, proximity):
        for layer in proximity.layers:
            self.assert_bins_ordered(proximity.key_bin_means[layer])
            self.assert_bins_ordered(proximity.value_bin_means[layer])

    def test_offset_distance_tracks_embedding_distance(self, offset_proximity):
        for layer in offset_proximity.layers[1:]:
            assert offset_proximity.key_rho[layer] > 0.3
            assert offset_proximity.value_rho[layer] > 0.3

    def test_offset_bins_ordered(self, offset_proximity):
        for layer in offset_proximity.layers:
            self.assert_bins_ordered(offset_proximity.key_bin_means[layer])
            self.assert_bins_ordered(offset_proximity.value_bin_means[layer])

    def test_rotated_offsets_smaller_at_every_layer(self, default_model):
        report = offset_variance_experiment(default_model, ExperimentConfig())
        for layer in report.layers:
            assert report.key_rotated[layer][0] < report.key_unrotated[layer][0]
