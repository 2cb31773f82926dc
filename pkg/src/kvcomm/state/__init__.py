"""Agent-turn state for kvcomm."""

from kvcomm.state.machine import TRANSITIONS, InvalidTransitionError, TurnMachine
from kvcomm.state.models import (
    AgentPhase,
    AgentTurn,
    Branch,
    Event,
    SegmentRecord,
    TurnState,
)
from kvcomm.state.storage import TranscriptStorage, load_transcript

__all__ = [
    "AgentPhase",
    "AgentTurn",
    "Branch",
    "Event",
    "InvalidTransitionError",
    "SegmentRecord",
    "TRANSITIONS",
    "TranscriptStorage",
    "TurnMachine",
    "TurnState",
    "load_transcript",
]
