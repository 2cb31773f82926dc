"""Phase machine for agent turns."""

from typing import Any, Optional, Protocol

from kvcomm.errors import ContractError
from kvcomm.state.models import AgentPhase, AgentTurn, Event

# Valid transitions: (current_phase, event) -> next_phase
TRANSITIONS: dict[tuple[AgentPhase, Event], AgentPhase] = {
    (AgentPhase.PENDING, Event.BASES_ENSURED): AgentPhase.BASES_READY,
    (AgentPhase.BASES_READY, Event.ALL_SHAREABLE): AgentPhase.REUSING,
    (AgentPhase.BASES_READY, Event.FALLBACK_REQUIRED): AgentPhase.DENSE_PREFILLING,
    (AgentPhase.REUSING, Event.DECODE_FINISHED): AgentPhase.DECODED,
    (AgentPhase.DENSE_PREFILLING, Event.DECODE_FINISHED): AgentPhase.DECODED,
    (AgentPhase.DECODED, Event.RESPONSE_SHARED): AgentPhase.SHARED,
    (AgentPhase.DECODED, Event.RESPONSE_ANCHORED): AgentPhase.ANCHORED,
    (AgentPhase.PENDING, Event.FAILED): AgentPhase.FAILED,
    (AgentPhase.BASES_READY, Event.FAILED): AgentPhase.FAILED,
    (AgentPhase.REUSING, Event.FAILED): AgentPhase.FAILED,
    (AgentPhase.DENSE_PREFILLING, Event.FAILED): AgentPhase.FAILED,
    (AgentPhase.DECODED, Event.FAILED): AgentPhase.FAILED,
}


class TurnSink(Protocol):
    """Receives agent turns once they finish."""

    def save(self, agent_turn: AgentTurn) -> None: ...


class InvalidTransitionError(ContractError):
    """Raised when an invalid phase transition is attempted."""

    default_error_type = "INVALID_TRANSITION"

    def __init__(self, current_phase: AgentPhase, event: Event) -> None:
        self.current_phase = current_phase
        self.event = event
        super().__init__(
            f"Invalid transition: cannot apply {event.value} in phase "
            f"{current_phase.value}"
        )


class TurnMachine:
    """Tracks agent turns by (turn, agent id) and applies transitions."""

    def __init__(self, sink: Optional[TurnSink] = None) -> None:
        self._sink = sink
        self._turns: dict[tuple[int, str], AgentTurn] = {}

    def get_turn(self, turn: int, agent_id: str) -> AgentTurn:
        """Get the agent turn, creating a PENDING one if absent."""
        key = (turn, agent_id)
        if key not in self._turns:
            self._turns[key] = AgentTurn(agent_id=agent_id, turn=turn)
        return self._turns[key]

    def has_finished(self, turn: int, agent_id: str) -> bool:
        existing = self._turns.get((turn, agent_id))
        return existing is not None and existing.finished

    def can_transition(self, current_phase: AgentPhase, event: Event) -> bool:
        return (current_phase, event) in TRANSITIONS

    def transition(
        self, turn: int, agent_id: str, event: Event, **kwargs: Any
    ) -> AgentTurn:
        """Apply ``event`` to the agent turn.

        Args:
            turn: Turn index.
            agent_id: Agent id.
            event: Event triggering the transition.
            **kwargs: Additional fields to update on AgentTurn.

        Returns:
            Updated AgentTurn.

        Raises:
            InvalidTransitionError: If the transition is not valid.
        """
        state = self.get_turn(turn, agent_id)
        if not self.can_transition(state.phase, event):
            raise InvalidTransitionError(state.phase, event)

        state.previous_phase = state.phase
        state.phase = TRANSITIONS[(state.phase, event)]
        for key, value in kwargs.items():
            if hasattr(state, key):
                setattr(state, key, value)

        if self._sink and state.finished:
            self._sink.save(state)
        return state
