"""JSONL transcript storage for agent turns."""

import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

from kvcomm import __version__
from kvcomm.state.models import AgentTurn

TRANSCRIPT_FILE = "transcript.jsonl"
TIMINGS_FILE = "timings.jsonl"

# Fields that vary with wall-clock time or pool contents; kept out of the
# transcript so it is byte-deterministic.
_VOLATILE_FIELDS = (
    "ttft_seconds",
    "total_seconds",
    "verdicts",
    "matched_anchor_ids",
    "phase",
    "previous_phase",
)


class TranscriptStorage:
    """Appends finished agent turns to ``transcript.jsonl``.

    Timings go to ``timings.jsonl`` next to it.
    """

    def __init__(self, out_dir: Optional[Path] = None) -> None:
        """Initialize storage with an output directory.

        Args:
            out_dir: Directory for the JSONL files. Defaults to ./runs
        """
        self._out_dir = out_dir or Path("runs")
        self._out_dir.mkdir(parents=True, exist_ok=True)
        self.transcript_path = self._out_dir / TRANSCRIPT_FILE
        self.timings_path = self._out_dir / TIMINGS_FILE
        self.transcript_path.write_text("")
        self.timings_path.write_text("")

    def _serialize(self, turn: AgentTurn) -> dict[str, Any]:
        """Convert an AgentTurn to a JSON-serializable record."""
        data = asdict(turn)
        for name in _VOLATILE_FIELDS:
            data.pop(name, None)
        data["branch"] = turn.branch.value if turn.branch else None
        data["type"] = "turn"
        return data

    def _append(self, path: Path, record: dict[str, Any]) -> None:
        with path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def write_header(self, config: dict[str, Any]) -> None:
        """Write a header line (type=header) with the config and tool version."""
        self._append(
            self.transcript_path,
            {"type": "header", "config": config, "version": __version__},
        )

    def save(self, turn: AgentTurn) -> None:
        """Append one finished agent turn and its timings."""
        self._append(self.transcript_path, self._serialize(turn))
        self._append(
            self.timings_path,
            {
                "turn": turn.turn,
                "agent_id": turn.agent_id,
                "ttft_seconds": turn.ttft_seconds,
                "total_seconds": turn.total_seconds,
            },
        )


def load_transcript(path: Path) -> list[dict[str, Any]]:
    """Load turn records from a transcript, skipping header lines."""
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        if data.get("type") == "header":
            continue
        records.append(data)
    return records
