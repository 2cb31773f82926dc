"""Requests and seeded workload generators."""

from dataclasses import dataclass, field

import numpy as np

from kvcomm.orchestrator.graph import AgentSpec
from kvcomm.orchestrator.prompts import format_agent_template

_TOPICS = (
    "How many apples remain if Tom has {a} apples and eats {b}?",
    "What is {a} plus {b} times two?",
    "A train travels {a} km in {b} hours. What is its speed?",
    "If a shirt costs {a} dollars with {b} percent off, what is the price?",
    "Sara reads {a} pages a day for {b} days. How many pages in total?",
)


@dataclass(frozen=True)
class Request:
    """One user request.

    Attributes:
        question: User question text.
        tool_outputs: Condition source id -> tool output text.
    """

    question: str
    tool_outputs: dict[str, str] = field(default_factory=dict)


def fully_connected_agents(count: int) -> list[AgentSpec]:
    """Agents 1..count where each reads the question and every earlier agent."""
    agents = []
    for index in range(count):
        upstream = [str(j + 1) for j in range(index)]
        agents.append(
            AgentSpec(
                agent_id=str(index + 1),
                template=format_agent_template(index, upstream),
                upstream=tuple(upstream),
            )
        )
    return agents


def clustered_requests(
    count: int, seed: int, clusters: int = 3, spread: int = 9
) -> list[Request]:
    """Seeded questions drawn from a few topic templates.

    Requests in one cluster share a topic and differ only in their numbers,
    so their embeddings sit close together.

    Args:
        count: Number of requests.
        seed: RNG seed.
        clusters: Number of topics used, at most the available topics.
        spread: Numbers are drawn from [1, spread].
    """
    if clusters < 1 or clusters > len(_TOPICS):
        raise ValueError(f"clusters must be in [1, {len(_TOPICS)}], got {clusters}")
    rng = np.random.default_rng(seed)
    requests = []
    for _ in range(count):
        topic = _TOPICS[int(rng.integers(clusters))]
        a, b = (int(x) for x in rng.integers(1, spread + 1, size=2))
        requests.append(Request(question=topic.format(a=a, b=b)))
    return requests
