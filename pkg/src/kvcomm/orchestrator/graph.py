"""Directed acyclic agent graph and its deterministic schedule."""

import logging
from dataclasses import dataclass, field

from kvcomm.errors import GraphError
from kvcomm.orchestrator.templates import (
    AGENT_ID_PATTERN,
    ParsedTemplate,
    PlaceholderKind,
    parse_template,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentSpec:
    """One agent: id, prompt template and upstream agents.

    The template is parsed on construction, so an invalid placeholder name
    raises TemplateParseError here.
    """

    agent_id: str
    template: str
    upstream: tuple[str, ...] = ()
    parsed: ParsedTemplate = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not AGENT_ID_PATTERN.fullmatch(self.agent_id):
            raise GraphError(
                f"Agent id {self.agent_id!r} must match [A-Za-z0-9]+"
            )
        object.__setattr__(self, "upstream", tuple(self.upstream))
        object.__setattr__(self, "parsed", parse_template(self.template))

    def consumed_names(self) -> set[str]:
        return {ref.name for ref in self.parsed.placeholders}


class AgentGraph:
    """Agents with edges upstream -> downstream.

    Raises:
        GraphError: On duplicate ids, unknown upstream ids, a cycle, or a
            current-response placeholder whose source is not upstream.
    """

    def __init__(self, agents: list[AgentSpec]) -> None:
        self.agents: dict[str, AgentSpec] = {}
        for agent in agents:
            if agent.agent_id in self.agents:
                raise GraphError(f"Duplicate agent id {agent.agent_id!r}")
            self.agents[agent.agent_id] = agent
        self._validate_edges()
        self.order: list[str] = self._topological_order()
        logger.debug("Agent schedule: %s", self.order)

    def __len__(self) -> int:
        return len(self.agents)

    def _validate_edges(self) -> None:
        for agent in self.agents.values():
            unknown = [u for u in agent.upstream if u not in self.agents]
            if unknown:
                raise GraphError(
                    f"Agent {agent.agent_id!r} has unknown upstream agents {unknown}"
                )
            if agent.agent_id in agent.upstream:
                raise GraphError(f"Agent {agent.agent_id!r} lists itself upstream")
            for ref in agent.parsed.placeholders:
                if ref.kind is not PlaceholderKind.AGENT_CURRENT:
                    continue
                if ref.source not in agent.upstream:
                    raise GraphError(
                        f"Agent {agent.agent_id!r} reads {ref.rendered} but "
                        f"{ref.source!r} is not upstream"
                    )

    def _topological_order(self) -> list[str]:
        indegree = {aid: len(spec.upstream) for aid, spec in self.agents.items()}
        downstream: dict[str, list[str]] = {aid: [] for aid in self.agents}
        for aid, spec in self.agents.items():
            for up in spec.upstream:
                downstream[up].append(aid)
        ready = sorted(aid for aid, d in indegree.items() if d == 0)
        order: list[str] = []
        while ready:
            current = ready.pop(0)
            order.append(current)
            for nxt in downstream[current]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
            ready.sort()
        if len(order) != len(self.agents):
            stuck = sorted(set(self.agents) - set(order))
            raise GraphError(f"Agent graph has a cycle through {stuck}")
        return order

    def consumed_names(self) -> set[str]:
        """Every placeholder name used by any agent."""
        names: set[str] = set()
        for spec in self.agents.values():
            names |= spec.consumed_names()
        return names

    def ordered(self) -> list[AgentSpec]:
        return [self.agents[aid] for aid in self.order]
