"""Unit tests for savings reports and the CSV/JSON writers."""

import csv
import json
from types import SimpleNamespace

import pytest

from kvcomm import __version__
from kvcomm.analysis import (
    CSV_COLUMNS,
    SWEEP_COLUMNS,
    approximation_error_profile,
    profile_rows,
    savings_report,
    write_csv,
    write_summary,
    write_sweep_csv,
)
from kvcomm.orchestrator import SharedKVStore
from kvcomm.state import AgentTurn, Branch, TurnState


@pytest.fixture
def system():
    pool = SimpleNamespace(nbytes=lambda: 100)
    return SimpleNamespace(
        pools={"user_question": pool, "agent_1_current": pool},
        store=SharedKVStore(),
        gamma=0.3,
        capacity=20,
    )


def make_turn(index, branches):
    state = TurnState(turn=index, question="q")
    for agent_id, branch in branches.items():
        reused = 8 if branch is Branch.REUSE else 0
        state.agents[agent_id] = AgentTurn(
            agent_id,
            index,
            prompt_length=8,
            branch=branch,
            reused_tokens=reused,
            prefilled_tokens=8 - reused,
            ttft_seconds=0.5,
        )
    return state


class TestSavingsReport:
    """Tests for savings_report."""

    def test_reuse_rate_and_ledger(self, system):
        turns = [
            make_turn(0, {"1": Branch.DENSE_FALLBACK, "2": Branch.DENSE_FALLBACK}),
            make_turn(1, {"1": Branch.REUSE, "2": Branch.DENSE_FALLBACK}),
        ]
        report = savings_report(turns, system)
        assert report["requests"] == 2
        assert report["agent_turns"] == 4
        assert report["reuse_rate"] == 0.25
        assert report["per_agent"]["1"] == {
            "turns": 2,
            "reuse_turns": 1,
            "prefilled_tokens": 8,
            "reused_tokens": 8,
            "mean_ttft_seconds": 0.5,
        }
        assert report["memory"]["pool_bytes"] == 200
        assert report["memory"]["total_bytes"] == 200
        assert report["gamma"] == 0.3

    def test_no_turns(self, system):
        report = savings_report([], system)
        assert report["reuse_rate"] == 0.0
        assert report["per_agent"] == {}


class TestApproximationProfile:
    """Tests for approximation_error_profile and profile_rows."""

    def test_means_per_mode_and_layer(self):
        records = [
            {
                "mode": "l2",
                "layer": 1,
                "key_cosine": 0.9,
                "key_l2": 1.0,
                "value_cosine": 0.8,
                "value_l2": 2.0,
            },
            {
                "mode": "l2",
                "layer": 1,
                "key_cosine": 0.7,
                "key_l2": 3.0,
                "value_cosine": 0.6,
                "value_l2": 4.0,
            },
        ]
        profile = approximation_error_profile(records)
        assert profile["l2"][1]["key_cosine"] == pytest.approx(0.8)
        assert profile["l2"][1]["value_l2"] == pytest.approx(3.0)

        rows = profile_rows(profile)
        assert len(rows) == 4
        assert rows[0]["metric"] == "l2_key_cosine"
        assert rows[0]["experiment"] == "approx-error"

    def test_empty(self):
        assert approximation_error_profile([]) == {}
        assert profile_rows({}) == []


class TestWriters:
    """Tests for write_csv, write_sweep_csv and write_summary."""

    def test_csv_columns_and_undefined(self, tmp_path):
        path = write_csv(
            tmp_path / "out" / "proximity.csv",
            [
                {"experiment": "proximity", "layer": 0, "metric": "m", "value": None},
                {"experiment": "proximity", "layer": 1, "metric": "m", "value": 0.5},
            ],
        )
        with path.open(newline="") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert rows[1][3] == "undefined"
        assert rows[2][3] == "0.5"

    def test_sweep_csv(self, tmp_path):
        row = {
            "parameter": "gamma",
            "value": 0.3,
            "reuse_rate": 0.5,
            "prefilled_tokens": 10,
            "reused_tokens": 20,
            "pool_bytes": 64,
            "extra": "ignored",
        }
        path = write_sweep_csv(tmp_path / "sweep_gamma.csv", [row])
        with path.open(newline="") as f:
            rows = list(csv.DictReader(f))
        assert tuple(rows[0]) == SWEEP_COLUMNS
        assert rows[0]["reused_tokens"] == "20"

    def test_summary_echoes_config_and_version(self, tmp_path):
        path = write_summary(tmp_path / "summary.json", {"seed": 1}, {"x": 2})
        payload = json.loads(path.read_text())
        assert payload == {
            "version": __version__,
            "config": {"seed": 1},
            "results": {"x": 2},
        }
