"""Per-turn state models for agent execution."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class AgentPhase(Enum):
    """Lifecycle phase of one agent within one turn."""

    PENDING = "PENDING"
    BASES_READY = "BASES_READY"
    REUSING = "REUSING"
    DENSE_PREFILLING = "DENSE_PREFILLING"
    DECODED = "DECODED"
    SHARED = "SHARED"
    ANCHORED = "ANCHORED"
    FAILED = "FAILED"


class Event(Enum):
    """Events that move an agent turn between phases."""

    BASES_ENSURED = "BASES_ENSURED"
    ALL_SHAREABLE = "ALL_SHAREABLE"
    FALLBACK_REQUIRED = "FALLBACK_REQUIRED"
    DECODE_FINISHED = "DECODE_FINISHED"
    RESPONSE_SHARED = "RESPONSE_SHARED"
    RESPONSE_ANCHORED = "RESPONSE_ANCHORED"
    FAILED = "FAILED"


class Branch(Enum):
    """How the agent's prompt KV was obtained."""

    REUSE = "reuse"
    DENSE_FALLBACK = "dense_fallback"


FINISHED_PHASES = frozenset({AgentPhase.SHARED, AgentPhase.ANCHORED})


@dataclass
class SegmentRecord:
    """Provenance of one prompt segment.

    ``source`` is ``approximated`` for reconstructed KV, ``base`` for an
    exact precomputed base and ``prefilled`` for dense prefill.
    """

    kind: str
    slot: int
    start: int
    length: int
    source: str


@dataclass
class AgentTurn:
    """Tracks one agent's work on one turn."""

    agent_id: str
    turn: int

    # State machine
    phase: AgentPhase = AgentPhase.PENDING
    previous_phase: Optional[AgentPhase] = None

    # Inputs
    placeholder_tokens: list[list[int]] = field(default_factory=list)
    prompt_length: int = 0

    # Branch and provenance
    branch: Optional[Branch] = None
    verdicts: list[str] = field(default_factory=list)
    matched_anchor_ids: list[list[str]] = field(default_factory=list)
    segments: list[SegmentRecord] = field(default_factory=list)

    # Token ledger
    prefilled_tokens: int = 0
    reused_tokens: int = 0

    # Output
    response_tokens: list[int] = field(default_factory=list)
    response_text: str = ""

    # Timings, seconds
    ttft_seconds: float = 0.0
    total_seconds: float = 0.0

    # Error handling
    error_message: Optional[str] = None
    error_type: Optional[str] = None

    @property
    def finished(self) -> bool:
        return self.phase in FINISHED_PHASES

    def ledger_balanced(self) -> bool:
        return self.prefilled_tokens + self.reused_tokens == self.prompt_length


@dataclass
class TurnState:
    """All agent turns for one request."""

    turn: int
    question: str
    agents: dict[str, AgentTurn] = field(default_factory=dict)

    def reused_agents(self) -> int:
        return sum(1 for a in self.agents.values() if a.branch is Branch.REUSE)
