"""Configuration management for kvcomm.

Environment settings come from ``KVCOMM_*`` variables (``.env`` is loaded
when present); workloads come from JSON files validated before any model
work starts.
"""

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv

from kvcomm.analysis.experiments import ExperimentConfig
from kvcomm.anchors.models import DEFAULT_CAPACITY
from kvcomm.anchors.weighting import WeightingMode
from kvcomm.errors import ConfigError
from kvcomm.model.config import ModelConfig
from kvcomm.orchestrator.graph import AgentGraph, AgentSpec
from kvcomm.orchestrator.workload import (
    Request,
    clustered_requests,
    fully_connected_agents,
)
from kvcomm.utils.validation import validate_workload

DEFAULT_GAMMA = 0.3
DEFAULT_MAX_NEW_TOKENS = 16


@dataclass(frozen=True)
class Settings:
    """Process settings loaded from environment variables."""

    seed: int | None = None
    log_level: str = "INFO"
    threads: int = 1


def _optional_int(key: str) -> int | None:
    value = os.getenv(key)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError as e:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from e


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Get singleton Settings instance. Loads .env file if present."""
    load_dotenv()

    return Settings(
        seed=_optional_int("KVCOMM_SEED"),
        log_level=os.getenv("KVCOMM_LOG_LEVEL", "INFO"),
        threads=_optional_int("KVCOMM_THREADS") or 1,
    )


@dataclass(frozen=True)
class AgentConfig:
    """One agent entry of a workload file."""

    agent_id: str
    template: str
    upstream: tuple[str, ...] = ()


@dataclass(frozen=True)
class WorkloadConfig:
    """A fully resolved workload.

    Attributes:
        model: Transformer dimensions; ``model.seed`` equals ``seed``.
        agents: Agent entries (explicit or generated).
        requests: Requests in processing order.
        gamma: Entropy threshold factor.
        capacity: Anchor pool capacity.
        seed: Resolved seed (flag > environment > file).
        max_new_tokens: Greedy decode budget per agent turn.
        condition_default: Tool output for conditions a request leaves unset.
        approximation: Anchor weighting mode.
        reuse_enabled: False disables the anchor engine.
        output_dir: Default output directory.
        experiment: Analysis experiment settings.
    """

    model: ModelConfig
    agents: tuple[AgentConfig, ...]
    requests: tuple[Request, ...] = ()
    gamma: float = DEFAULT_GAMMA
    capacity: int = DEFAULT_CAPACITY
    seed: int = 0
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    condition_default: str = ""
    approximation: WeightingMode = WeightingMode.L2
    reuse_enabled: bool = True
    output_dir: str = "runs"
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def build_graph(self) -> AgentGraph:
        """Parse templates and build the agent graph.

        Raises:
            TemplateParseError: On a placeholder outside the grammar.
            GraphError: On cycles, unknown upstream ids or bad agent ids.
        """
        return AgentGraph(
            [AgentSpec(a.agent_id, a.template, a.upstream) for a in self.agents]
        )

    def to_dict(self) -> dict[str, Any]:
        """JSON-serializable echo of the resolved config."""
        return {
            "model": self.model.to_dict(),
            "agents": [
                {
                    "id": a.agent_id,
                    "template": a.template,
                    "upstream": list(a.upstream),
                }
                for a in self.agents
            ],
            "requests": [
                {"question": r.question, "tool_outputs": dict(r.tool_outputs)}
                for r in self.requests
            ],
            "gamma": self.gamma,
            "capacity": self.capacity,
            "seed": self.seed,
            "max_new_tokens": self.max_new_tokens,
            "condition_default": self.condition_default,
            "approximation": self.approximation.value,
            "reuse_enabled": self.reuse_enabled,
            "output_dir": self.output_dir,
            "experiment": self.experiment.to_dict(),
        }


def resolve_seed(
    flag: Optional[int], settings: Settings, file_seed: Optional[int]
) -> int:
    """Seed precedence: command-line flag, then KVCOMM_SEED, then the file."""
    for candidate in (flag, settings.seed, file_seed):
        if candidate is not None:
            return candidate
    return 0


def _agents(data: dict[str, Any]) -> tuple[AgentConfig, ...]:
    if "agent_count" in data:
        return tuple(
            AgentConfig(spec.agent_id, spec.template, spec.upstream)
            for spec in fully_connected_agents(data["agent_count"])
        )
    return tuple(
        AgentConfig(a["id"], a["template"], tuple(a.get("upstream", [])))
        for a in data["agents"]
    )


def _requests(data: dict[str, Any], seed: int) -> tuple[Request, ...]:
    if "generated_requests" in data:
        spec = data["generated_requests"]
        return tuple(
            clustered_requests(
                spec["count"],
                seed,
                clusters=spec.get("clusters", 3),
                spread=spec.get("spread", 9),
            )
        )
    out = []
    for item in data.get("requests", []):
        if isinstance(item, str):
            out.append(Request(question=item))
        else:
            out.append(Request(item["question"], dict(item.get("tool_outputs", {}))))
    return tuple(out)


def workload_from_dict(
    data: Any,
    seed_override: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> WorkloadConfig:
    """Validate and resolve a parsed workload.

    Raises:
        ConfigError: If validation fails; ``error_type`` carries the reason.
    """
    result = validate_workload(data)
    if not result.is_valid:
        raise ConfigError(
            result.error_message or "Invalid workload config",
            error_type=(result.error_type or "invalid").upper(),
        )
    settings = settings or get_settings()
    seed = resolve_seed(seed_override, settings, data.get("seed"))
    model = ModelConfig.from_dict({**data.get("model", {}), "seed": seed})
    experiment = ExperimentConfig.from_dict(
        {"threads": settings.threads, **data.get("experiment", {}), "seed": seed}
    )
    return WorkloadConfig(
        model=model,
        agents=_agents(data),
        requests=_requests(data, seed),
        gamma=float(data.get("gamma", DEFAULT_GAMMA)),
        capacity=int(data.get("capacity", DEFAULT_CAPACITY)),
        seed=seed,
        max_new_tokens=int(data.get("max_new_tokens", DEFAULT_MAX_NEW_TOKENS)),
        condition_default=data.get("condition_default", ""),
        approximation=WeightingMode(data.get("approximation", "l2")),
        reuse_enabled=bool(data.get("reuse_enabled", True)),
        output_dir=data.get("output_dir", "runs"),
        experiment=experiment,
    )


def load_workload_config(
    path: Path,
    seed_override: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> WorkloadConfig:
    """Read and resolve a workload JSON file.

    Raises:
        ConfigError: If the file is missing, not JSON, or invalid.
    """
    if not path.is_file():
        raise ConfigError(
            f"Config file not found: {path}", error_type="CONFIG_MISSING"
        )
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    return workload_from_dict(data, seed_override, settings)

