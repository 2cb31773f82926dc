"""Proximity and offset-variance experiments on the toy transformer.

The proximity experiments sample distinct byte tokens, place each one after
a shared random prefix and relate pairwise embedding distances to the
distances between the tokens' keys and values (or between their offsets
from a standalone base). The variance experiment measures how much the
offset of one fixed token sequence moves across random prefixes, with and
without de-rotating keys first.
"""

import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, TypeVar

import numpy as np

from kvcomm.analysis.stats import (
    ZERO_DISTANCE,
    bin_labels,
    mean_std,
    spearman,
    split_bins,
)
from kvcomm.errors import ConfigError
from kvcomm.geometry.fragments import KVFragment, measure_offset
from kvcomm.model.cache import KVCache
from kvcomm.model.tokenizer import BOS_ID
from kvcomm.model.transformer import Transformer

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

EXPERIMENTS = ("proximity", "offset-proximity", "offset-variance", "approx-error")
PAIR_SELECTIONS = ("spread", "closest")

_BYTE_VOCAB = 256


@dataclass(frozen=True)
class ExperimentConfig:
    """Scale and seed of the analysis experiments.

    Attributes:
        token_count: Distinct byte tokens sampled (capped at 256).
        pair_count: Token pairs reported.
        pair_selection: ``spread`` takes pairs at even ranks over the whole
            distance range; ``closest`` takes the nearest pairs only.
        bin_count: Distance bins (near/mid/far for 3).
        prefix_count: Random prefixes in the variance experiment.
        prefix_length: Random bytes per prefix (BOS is prepended).
        sequence_length: Shared token sequence length for the variance run.
        layers: Layers to report; empty means all.
        seed: RNG seed.
        threads: Worker threads for the per-token passes.
    """

    token_count: int = 400
    pair_count: int = 120
    pair_selection: str = "spread"
    bin_count: int = 3
    prefix_count: int = 10
    prefix_length: int = 32
    sequence_length: int = 16
    layers: tuple[int, ...] = ()
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.sampled_tokens < 2:
            raise ConfigError(f"token_count must be >= 2, got {self.token_count}")
        if self.bin_count < 1 or self.pair_count < self.bin_count:
            raise ConfigError(
                f"pair_count ({self.pair_count}) must be >= bin_count "
                f"({self.bin_count}) >= 1"
            )
        available = self.sampled_tokens * (self.sampled_tokens - 1) // 2
        if self.pair_count > available:
            raise ConfigError(
                f"pair_count {self.pair_count} exceeds the {available} available pairs"
            )
        if self.pair_selection not in PAIR_SELECTIONS:
            raise ConfigError(
                f"pair_selection must be one of {', '.join(PAIR_SELECTIONS)}, "
                f"got {self.pair_selection!r}"
            )
        if self.prefix_count < 2:
            raise ConfigError(f"prefix_count must be >= 2, got {self.prefix_count}")
        if self.prefix_length < 1 or self.sequence_length < 1:
            raise ConfigError("prefix_length and sequence_length must be >= 1")

    @property
    def sampled_tokens(self) -> int:
        return min(self.token_count, _BYTE_VOCAB)

    def to_dict(self) -> dict[str, Any]:
        """Config echo without ``threads``."""
        data = asdict(self)
        data.pop("threads")
        data["layers"] = list(self.layers)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown experiment fields: {', '.join(unknown)}")
        values = dict(data)
        if "layers" in values:
            values["layers"] = tuple(values["layers"])
        return cls(**values)


@dataclass
class CorrelationReport:
    """Per-layer rank correlation and binned distances.

    ``key_rho``/``value_rho`` hold None where the correlation is undefined
    (constant distances, e.g. offsets at layer 0).
    """

    experiment: str
    layers: list[int]
    key_rho: dict[int, float | None] = field(default_factory=dict)
    value_rho: dict[int, float | None] = field(default_factory=dict)
    bins: list[str] = field(default_factory=list)
    key_bin_means: dict[int, list[float]] = field(default_factory=dict)
    value_bin_means: dict[int, list[float]] = field(default_factory=dict)
    pair_count: int = 0
    pair_selection: str = "spread"
    selection_key_rho: dict[str, dict[int, float | None]] = field(
        default_factory=dict
    )
    selection_value_rho: dict[str, dict[int, float | None]] = field(
        default_factory=dict
    )

    def rows(self) -> list[dict[str, Any]]:
        """Flat (experiment, layer, metric, value) rows."""
        out = []
        for layer in self.layers:
            for kind, rho, means in (
                ("key", self.key_rho, self.key_bin_means),
                ("value", self.value_rho, self.value_bin_means),
            ):
                out.append(self._row(layer, f"{kind}_spearman", rho[layer]))
                for label, mean in zip(self.bins, means[layer]):
                    out.append(self._row(layer, f"{kind}_mean_distance_{label}", mean))
            for kind, table in (
                ("key", self.selection_key_rho),
                ("value", self.selection_value_rho),
            ):
                for selection in sorted(table):
                    metric = f"{kind}_spearman_{selection}"
                    out.append(self._row(layer, metric, table[selection][layer]))
        return out

    def _row(self, layer: int, metric: str, value: float | None) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "layer": layer,
            "metric": metric,
            "value": value,
        }


@dataclass
class OffsetVarianceReport:
    """Per-layer mean and spread of offset norms across prefixes.

    Each dict maps layer -> (mean norm, mean per-position std across prefixes).
    """

    layers: list[int]
    key_rotated: dict[int, tuple[float, float]] = field(default_factory=dict)
    key_unrotated: dict[int, tuple[float, float]] = field(default_factory=dict)
    value: dict[int, tuple[float, float]] = field(default_factory=dict)

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for layer in self.layers:
            for name, table in (
                ("key_rotated", self.key_rotated),
                ("key_unrotated", self.key_unrotated),
                ("value", self.value),
            ):
                mean, std = table[layer]
                for metric, value in ((f"{name}_mean", mean), (f"{name}_std", std)):
                    out.append(
                        {
                            "experiment": "offset-variance",
                            "layer": layer,
                            "metric": metric,
                            "value": value,
                        }
                    )
        return out


def _map(fn: Callable[[T], R], items: Iterable[T], threads: int) -> list[R]:
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _layers(cfg: ExperimentConfig, model: Transformer) -> list[int]:
    total = model.config.num_layers
    chosen = list(cfg.layers) or list(range(total))
    bad = [layer for layer in chosen if not 0 <= layer < total]
    if bad:
        raise ConfigError(f"Layers {bad} outside [0, {total})")
    return chosen


def random_prefix(rng: np.random.Generator, length: int) -> list[int]:
    """BOS followed by ``length`` random byte tokens."""
    return [BOS_ID] + [int(t) for t in rng.integers(0, _BYTE_VOCAB, size=length)]


def sample_tokens(rng: np.random.Generator, count: int) -> list[int]:
    """``count`` distinct byte tokens."""
    return [int(t) for t in rng.choice(_BYTE_VOCAB, size=count, replace=False)]


def select_pairs(
    embeddings: np.ndarray, pair_count: int, selection: str = "spread"
) -> tuple[np.ndarray, np.ndarray]:
    """Token pairs ranked by embedding distance.

    Args:
        embeddings: (T, D) embeddings of the sampled tokens.
        pair_count: Number of pairs to keep.
        selection: ``spread`` picks evenly spaced ranks over all pairs;
            ``closest`` keeps the ``pair_count`` nearest pairs.

    Returns:
        (pairs (pair_count, 2) index array, embedding distances) ordered from
        nearest to farthest.
    """
    i, j = np.triu_indices(embeddings.shape[0], k=1)
    distances = np.linalg.norm(embeddings[i] - embeddings[j], axis=1)
    order = np.argsort(distances, kind="stable")
    if selection == "closest":
        picks = order[:pair_count]
    elif selection == "spread":
        ranks = np.linspace(0, order.size - 1, pair_count).round().astype(int)
        picks = order[ranks]
    else:
        raise ConfigError(f"Unknown pair selection {selection!r}")
    return np.stack([i[picks], j[picks]], axis=1), distances[picks]


def _suffix_kv(
    model: Transformer, prefix_cache: KVCache, tokens: Sequence[int]
) -> KVFragment:
    fragment, _ = model.forward_prefill(list(tokens), len(prefix_cache), prefix_cache)
    return fragment


def _pair_distances(
    keys: np.ndarray, values: np.ndarray, pairs: np.ndarray, layer: int
) -> tuple[np.ndarray, np.ndarray]:
    """l2 distances of (T, L, H*d) key/value rows for each pair at ``layer``."""
    a, b = pairs[:, 0], pairs[:, 1]
    key_d = np.linalg.norm(keys[a, layer] - keys[b, layer], axis=1)
    value_d = np.linalg.norm(values[a, layer] - values[b, layer], axis=1)
    key_d[key_d < ZERO_DISTANCE] = 0.0
    value_d[value_d < ZERO_DISTANCE] = 0.0
    return key_d, value_d


def _correlate(
    experiment: str,
    cfg: ExperimentConfig,
    layers: list[int],
    embeddings: np.ndarray,
    distances: Callable[[np.ndarray, int], tuple[np.ndarray, np.ndarray]],
) -> CorrelationReport:
    """Correlate under the configured selection; rho for every selection."""
    selected = {
        selection: select_pairs(embeddings, cfg.pair_count, selection)
        for selection in PAIR_SELECTIONS
    }
    pairs, embed_d = selected[cfg.pair_selection]
    report = CorrelationReport(
        experiment=experiment,
        layers=layers,
        bins=bin_labels(cfg.bin_count),
        pair_count=len(embed_d),
        pair_selection=cfg.pair_selection,
    )
    for layer in layers:
        for selection, (other_pairs, other_d) in selected.items():
            k, v = distances(other_pairs, layer)
            report.selection_key_rho.setdefault(selection, {})[layer] = spearman(
                other_d, k
            )
            report.selection_value_rho.setdefault(selection, {})[layer] = spearman(
                other_d, v
            )
        key_d, value_d = distances(pairs, layer)
        report.key_rho[layer] = spearman(embed_d, key_d)
        report.value_rho[layer] = spearman(embed_d, value_d)
        report.key_bin_means[layer] = [
            float(b.mean()) for b in split_bins(key_d, cfg.bin_count)
        ]
        report.value_bin_means[layer] = [
            float(b.mean()) for b in split_bins(value_d, cfg.bin_count)
        ]
        logger.info(
            "%s layer %d (%s pairs): key rho=%s value rho=%s",
            experiment,
            layer,
            cfg.pair_selection,
            report.key_rho[layer],
            report.value_rho[layer],
        )
    return report


def _flatten_last(fragment: KVFragment) -> tuple[np.ndarray, np.ndarray]:
    """Last position of a fragment as (L, H*d) key and value rows."""
    keys = fragment.keys[:, :, -1, :]
    values = fragment.values[:, :, -1, :]
    return keys.reshape(keys.shape[0], -1), values.reshape(values.shape[0], -1)


def kv_proximity_experiment(
    model: Transformer, cfg: ExperimentConfig
) -> CorrelationReport:
    """Embedding distance vs key/value distance after a shared prefix."""
    rng = np.random.default_rng(cfg.seed)
    layers = _layers(cfg, model)
    tokens = sample_tokens(rng, cfg.sampled_tokens)
    prefix_cache, _ = model.prefill(random_prefix(rng, cfg.prefix_length))

    def token_kv(token: int) -> tuple[np.ndarray, np.ndarray]:
        return _flatten_last(_suffix_kv(model, prefix_cache, [token]))

    rows = _map(token_kv, tokens, cfg.threads)
    keys = np.stack([k for k, _ in rows])
    values = np.stack([v for _, v in rows])
    return _correlate(
        "proximity",
        cfg,
        layers,
        model.embed(tokens),
        lambda pairs, layer: _pair_distances(keys, values, pairs, layer),
    )


def offset_proximity_experiment(
    model: Transformer, cfg: ExperimentConfig
) -> CorrelationReport:
    """Embedding distance vs distance between aligned offsets.

    Every token is measured after two prefixes of different lengths; the
    reported distance between two tokens is the mean over both prefixes.
    """
    rng = np.random.default_rng(cfg.seed)
    layers = _layers(cfg, model)
    tokens = sample_tokens(rng, cfg.sampled_tokens)
    prefixes = [
        random_prefix(rng, cfg.prefix_length),
        random_prefix(rng, max(1, cfg.prefix_length // 2)),
    ]
    caches = [model.prefill(prefix)[0] for prefix in prefixes]

    def token_offsets(token: int) -> list[tuple[np.ndarray, np.ndarray]]:
        base, _ = model.forward_prefill([token])
        out = []
        for cache in caches:
            offset = measure_offset(_suffix_kv(model, cache, [token]), base)
            keys = offset.delta_keys[:, :, -1, :]
            values = offset.delta_values[:, :, -1, :]
            out.append(
                (keys.reshape(keys.shape[0], -1), values.reshape(values.shape[0], -1))
            )
        return out

    per_token = _map(token_offsets, tokens, cfg.threads)
    stacked = [
        (
            np.stack([rows[index][0] for rows in per_token]),
            np.stack([rows[index][1] for rows in per_token]),
        )
        for index in range(len(prefixes))
    ]

    def averaged(pairs: np.ndarray, layer: int) -> tuple[np.ndarray, np.ndarray]:
        key_d = np.zeros(len(pairs))
        value_d = np.zeros(len(pairs))
        for keys, values in stacked:
            k, v = _pair_distances(keys, values, pairs, layer)
            key_d += k / len(stacked)
            value_d += v / len(stacked)
        return key_d, value_d

    return _correlate("offset-proximity", cfg, layers, model.embed(tokens), averaged)


def offset_variance_experiment(
    model: Transformer,
    cfg: ExperimentConfig,
    prefixes: Sequence[Sequence[int]] | None = None,
) -> OffsetVarianceReport:
    """Spread of one sequence's offsets across different prefixes.

    Args:
        model: Transformer.
        cfg: Experiment config.
        prefixes: Explicit prefixes (token ids, same length); random
            BOS-led prefixes are drawn when omitted.

    Raises:
        ConfigError: If fewer than two prefixes are given or lengths differ.
    """
    rng = np.random.default_rng(cfg.seed)
    layers = _layers(cfg, model)
    sequence = [int(t) for t in rng.integers(0, _BYTE_VOCAB, size=cfg.sequence_length)]
    if prefixes is None:
        prefixes = [
            random_prefix(rng, cfg.prefix_length) for _ in range(cfg.prefix_count)
        ]
    if len(prefixes) < 2:
        raise ConfigError("offset_variance_experiment needs at least two prefixes")
    if len({len(p) for p in prefixes}) != 1:
        raise ConfigError("All prefixes must have the same length")

    base, _ = model.forward_prefill(sequence)

    def offsets(prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cache, _ = model.prefill(list(prefix))
        real = _suffix_kv(model, cache, sequence)
        aligned = measure_offset(real, base, align=True)
        raw = measure_offset(real, base, align=False)
        # (L, H, N, d) -> (L, N) norms per position
        return (
            np.linalg.norm(aligned.delta_keys, axis=(1, 3)),
            np.linalg.norm(raw.delta_keys, axis=(1, 3)),
            np.linalg.norm(aligned.delta_values, axis=(1, 3)),
        )

    norms = _map(offsets, prefixes, cfg.threads)
    stacked = [np.stack([n[i] for n in norms]) for i in range(3)]  # (P, L, N)
    report = OffsetVarianceReport(layers=layers)
    for layer in layers:
        for table, values in zip(
            (report.key_rotated, report.key_unrotated, report.value), stacked
        ):
            per_layer = values[:, layer, :]
            mean, _ = mean_std(per_layer)
            table[layer] = (mean, float(np.mean(np.std(per_layer, axis=0))))
    return report
