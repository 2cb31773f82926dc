"""Unit tests for the agent-turn phase machine."""

import pytest

from kvcomm.errors import ContractError
from kvcomm.state import (
    TRANSITIONS,
    AgentPhase,
    AgentTurn,
    Branch,
    Event,
    InvalidTransitionError,
    TurnMachine,
    TurnState,
)


class RecordingSink:
    def __init__(self):
        self.saved = []

    def save(self, agent_turn):
        self.saved.append(agent_turn)


class TestTransitionsDict:
    """Tests for TRANSITIONS configuration."""

    def test_all_transitions_defined(self):
        """All expected transitions are in TRANSITIONS dict."""
        expected = [
            (AgentPhase.PENDING, Event.BASES_ENSURED, AgentPhase.BASES_READY),
            (AgentPhase.BASES_READY, Event.ALL_SHAREABLE, AgentPhase.REUSING),
            (
                AgentPhase.BASES_READY,
                Event.FALLBACK_REQUIRED,
                AgentPhase.DENSE_PREFILLING,
            ),
            (AgentPhase.REUSING, Event.DECODE_FINISHED, AgentPhase.DECODED),
            (AgentPhase.DENSE_PREFILLING, Event.DECODE_FINISHED, AgentPhase.DECODED),
            (AgentPhase.DECODED, Event.RESPONSE_SHARED, AgentPhase.SHARED),
            (AgentPhase.DECODED, Event.RESPONSE_ANCHORED, AgentPhase.ANCHORED),
        ]

        for from_phase, event, to_phase in expected:
            assert TRANSITIONS[(from_phase, event)] == to_phase

    def test_transition_count(self):
        """Seven lifecycle transitions plus FAILED from five phases."""
        assert len(TRANSITIONS) == 12

    def test_finished_phases_are_terminal(self):
        for phase in (AgentPhase.SHARED, AgentPhase.ANCHORED, AgentPhase.FAILED):
            assert not any(key[0] is phase for key in TRANSITIONS)


class TestCanTransition:
    """Tests for TurnMachine.can_transition method."""

    @pytest.fixture
    def machine(self):
        return TurnMachine()

    @pytest.mark.parametrize(
        "phase,event",
        [
            (AgentPhase.PENDING, Event.ALL_SHAREABLE),
            (AgentPhase.PENDING, Event.DECODE_FINISHED),
            (AgentPhase.BASES_READY, Event.DECODE_FINISHED),
            (AgentPhase.REUSING, Event.FALLBACK_REQUIRED),
            (AgentPhase.DECODED, Event.BASES_ENSURED),
            (AgentPhase.SHARED, Event.FAILED),
        ],
    )
    def test_invalid_transitions_return_false(self, machine, phase, event):
        """can_transition returns False for invalid transitions."""
        assert machine.can_transition(phase, event) is False

    def test_valid_transition_returns_true(self, machine):
        assert machine.can_transition(AgentPhase.PENDING, Event.BASES_ENSURED) is True


class TestTransition:
    """Tests for TurnMachine.transition method."""

    @pytest.fixture
    def machine(self):
        return TurnMachine()

    def test_reuse_path(self, machine):
        """PENDING -> BASES_READY -> REUSING -> DECODED -> SHARED."""
        machine.transition(0, "1", Event.BASES_ENSURED, prompt_length=10)
        machine.transition(0, "1", Event.ALL_SHAREABLE, branch=Branch.REUSE)
        machine.transition(0, "1", Event.DECODE_FINISHED, reused_tokens=10)
        state = machine.transition(0, "1", Event.RESPONSE_SHARED)

        assert state.phase == AgentPhase.SHARED
        assert state.previous_phase == AgentPhase.DECODED
        assert state.branch is Branch.REUSE
        assert state.ledger_balanced()
        assert machine.has_finished(0, "1")

    def test_dense_path_anchored(self, machine):
        machine.transition(0, "1", Event.BASES_ENSURED)
        state = machine.transition(0, "1", Event.FALLBACK_REQUIRED)
        assert state.phase == AgentPhase.DENSE_PREFILLING
        machine.transition(0, "1", Event.DECODE_FINISHED)
        state = machine.transition(0, "1", Event.RESPONSE_ANCHORED)
        assert state.phase == AgentPhase.ANCHORED
        assert state.finished

    def test_invalid_transition_raises(self, machine):
        with pytest.raises(InvalidTransitionError) as exc:
            machine.transition(0, "1", Event.DECODE_FINISHED)
        assert exc.value.current_phase == AgentPhase.PENDING
        assert exc.value.event == Event.DECODE_FINISHED
        assert exc.value.error_type == "INVALID_TRANSITION"
        assert isinstance(exc.value, ContractError)

    def test_failed_records_error(self, machine):
        machine.transition(0, "1", Event.BASES_ENSURED)
        state = machine.transition(
            0, "1", Event.FAILED, error_message="boom", error_type="GEOMETRY_MISMATCH"
        )
        assert state.phase == AgentPhase.FAILED
        assert state.error_type == "GEOMETRY_MISMATCH"
        assert not machine.has_finished(0, "1")

    def test_unknown_kwargs_ignored(self, machine):
        state = machine.transition(0, "1", Event.BASES_ENSURED, not_a_field=1)
        assert not hasattr(state, "not_a_field")

    def test_turns_are_independent(self, machine):
        machine.transition(0, "1", Event.BASES_ENSURED)
        assert machine.get_turn(1, "1").phase == AgentPhase.PENDING
        assert machine.get_turn(0, "2").phase == AgentPhase.PENDING

    def test_sink_receives_finished_turns_only(self):
        sink = RecordingSink()
        machine = TurnMachine(sink=sink)
        machine.transition(0, "1", Event.BASES_ENSURED)
        machine.transition(0, "1", Event.FALLBACK_REQUIRED)
        machine.transition(0, "1", Event.DECODE_FINISHED)
        assert sink.saved == []
        machine.transition(0, "1", Event.RESPONSE_SHARED)
        assert [t.agent_id for t in sink.saved] == ["1"]


class TestTurnState:
    """Tests for TurnState helpers."""

    def test_reused_agents(self):
        state = TurnState(turn=0, question="q")
        state.agents["1"] = AgentTurn("1", 0, branch=Branch.REUSE)
        state.agents["2"] = AgentTurn("2", 0, branch=Branch.DENSE_FALLBACK)
        assert state.reused_agents() == 1

    def test_ledger_unbalanced(self):
        turn = AgentTurn("1", 0, prompt_length=5, prefilled_tokens=3)
        assert not turn.ledger_balanced()
