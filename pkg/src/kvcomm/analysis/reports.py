"""Savings and approximation-error reports, CSV and JSON writers."""

import csv
import json
import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

from kvcomm import __version__
from kvcomm.state.models import Branch, TurnState

if TYPE_CHECKING:
    from kvcomm.orchestrator.runner import KVCommSystem

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("experiment", "layer", "metric", "value")

_PROFILE_METRICS = ("key_cosine", "key_l2", "value_cosine", "value_l2")


def savings_report(
    turns: Sequence[TurnState], system: "KVCommSystem"
) -> dict[str, Any]:
    """Reuse rate, per-agent token ledger and timings, and memory bytes.

    The reuse rate is the fraction of agent-turns that skipped prefill
    entirely. Memory counts every pool tensor plus the shared store.
    """
    per_agent: dict[str, dict[str, Any]] = {}
    total = reused = 0
    for turn in turns:
        for agent_id, agent in turn.agents.items():
            entry = per_agent.setdefault(
                agent_id,
                {
                    "turns": 0,
                    "reuse_turns": 0,
                    "prefilled_tokens": 0,
                    "reused_tokens": 0,
                    "ttft_seconds": [],
                },
            )
            entry["turns"] += 1
            entry["prefilled_tokens"] += agent.prefilled_tokens
            entry["reused_tokens"] += agent.reused_tokens
            entry["ttft_seconds"].append(agent.ttft_seconds)
            total += 1
            if agent.branch is Branch.REUSE:
                entry["reuse_turns"] += 1
                reused += 1
    for entry in per_agent.values():
        times = entry.pop("ttft_seconds")
        entry["mean_ttft_seconds"] = sum(times) / len(times) if times else 0.0

    pool_bytes = sum(pool.nbytes() for pool in system.pools.values())
    store_bytes = system.store.nbytes()
    return {
        "gamma": system.gamma,
        "capacity": system.capacity,
        "requests": len(turns),
        "agent_turns": total,
        "reuse_rate": reused / total if total else 0.0,
        "per_agent": {aid: per_agent[aid] for aid in sorted(per_agent)},
        "memory": {
            "pool_bytes": pool_bytes,
            "store_bytes": store_bytes,
            "total_bytes": pool_bytes + store_bytes,
        },
        "base_computations": system.store.base_computations,
    }


def approximation_error_profile(
    shadow_records: Iterable[dict[str, Any]],
) -> dict[str, dict[int, dict[str, float]]]:
    """Per-mode, per-layer means of the shadow-dense comparisons.

    Args:
        shadow_records: Rows collected by a run with shadow dense enabled.

    Returns:
        mode -> layer -> {key_cosine, key_l2, value_cosine, value_l2}; empty
        when no turn was reused.
    """
    sums: dict[str, dict[int, dict[str, float]]] = defaultdict(
        lambda: defaultdict(lambda: defaultdict(float))
    )
    counts: dict[tuple[str, int], int] = defaultdict(int)
    for row in shadow_records:
        mode, layer = row["mode"], int(row["layer"])
        counts[(mode, layer)] += 1
        for metric in _PROFILE_METRICS:
            sums[mode][layer][metric] += row[metric]
    profile: dict[str, dict[int, dict[str, float]]] = {}
    for mode in sorted(sums):
        profile[mode] = {
            layer: {
                metric: sums[mode][layer][metric] / counts[(mode, layer)]
                for metric in _PROFILE_METRICS
            }
            for layer in sorted(sums[mode])
        }
    return profile


def profile_rows(
    profile: dict[str, dict[int, dict[str, float]]],
) -> list[dict[str, Any]]:
    """Flatten a profile into CSV rows, one per (mode, layer, metric)."""
    rows = []
    for mode, layers in profile.items():
        for layer, metrics in layers.items():
            for metric in _PROFILE_METRICS:
                rows.append(
                    {
                        "experiment": "approx-error",
                        "layer": layer,
                        "metric": f"{mode}_{metric}",
                        "value": metrics[metric],
                    }
                )
    return rows


def write_csv(path: Path, rows: Iterable[dict[str, Any]]) -> Path:
    """Write rows with the fixed column order experiment,layer,metric,value.

    Undefined values are written as ``undefined``.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(CSV_COLUMNS))
        writer.writeheader()
        for row in rows:
            value = row["value"]
            writer.writerow(
                {**row, "value": "undefined" if value is None else repr(float(value))}
            )
    logger.info("Wrote %s", path)
    return path


def write_summary(path: Path, config: dict[str, Any], results: dict[str, Any]) -> Path:
    """Write a JSON summary echoing the resolved config and tool version."""
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"version": __version__, "config": config, "results": results}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


SWEEP_COLUMNS = (
    "parameter",
    "value",
    "reuse_rate",
    "prefilled_tokens",
    "reused_tokens",
    "pool_bytes",
)


def write_sweep_csv(path: Path, rows: Iterable[dict[str, Any]]) -> Path:
    """Write a sweep table, one row per swept value."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(SWEEP_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow({column: row[column] for column in SWEEP_COLUMNS})
    logger.info("Wrote %s", path)
    return path
