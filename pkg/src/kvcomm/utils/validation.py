"""Validation utilities for workload configuration files."""

from dataclasses import dataclass
from typing import Any, Optional

APPROXIMATION_MODES = ("l2", "cosine", "nearest")

# Topic templates available to the seeded request generator.
GENERATED_TOPICS = 5

_KNOWN_KEYS = {
    "model",
    "agents",
    "agent_count",
    "gamma",
    "capacity",
    "seed",
    "max_new_tokens",
    "requests",
    "generated_requests",
    "condition_default",
    "approximation",
    "reuse_enabled",
    "output_dir",
    "experiment",
}


@dataclass(frozen=True)
class ValidationResult:
    """Result of a validation check.

    Attributes:
        is_valid: Whether the validation passed.
        error_type: Type of error if validation failed (e.g., "invalid_gamma").
        error_message: Human-readable error description.
    """

    is_valid: bool
    error_type: Optional[str] = None
    error_message: Optional[str] = None


def _invalid(error_type: str, message: str) -> ValidationResult:
    return ValidationResult(
        is_valid=False, error_type=error_type, error_message=message
    )


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _validate_agents(data: dict[str, Any]) -> ValidationResult:
    has_list = "agents" in data
    has_count = "agent_count" in data
    if has_list == has_count:
        return _invalid(
            "invalid_agents", "Exactly one of 'agents' or 'agent_count' is required"
        )
    if has_count:
        count = data["agent_count"]
        if not _is_int(count) or count < 1:
            return _invalid(
                "invalid_agents", "'agent_count' must be a positive integer"
            )
        return ValidationResult(is_valid=True)
    agents = data["agents"]
    if not isinstance(agents, list) or not agents:
        return _invalid("invalid_agents", "'agents' must be a non-empty list")
    for index, agent in enumerate(agents):
        if not isinstance(agent, dict):
            return _invalid("invalid_agents", f"agents[{index}] must be an object")
        if not isinstance(agent.get("id"), str) or not isinstance(
            agent.get("template"), str
        ):
            return _invalid(
                "invalid_agents", f"agents[{index}] needs string 'id' and 'template'"
            )
        upstream = agent.get("upstream", [])
        if not isinstance(upstream, list) or not all(
            isinstance(u, str) for u in upstream
        ):
            return _invalid(
                "invalid_agents", f"agents[{index}].upstream must be a list of ids"
            )
    return ValidationResult(is_valid=True)


def _validate_requests(data: dict[str, Any]) -> ValidationResult:
    if "requests" in data and "generated_requests" in data:
        return _invalid(
            "invalid_requests", "Use either 'requests' or 'generated_requests'"
        )
    if "generated_requests" in data:
        spec = data["generated_requests"]
        if not isinstance(spec, dict) or not _is_int(spec.get("count")):
            return _invalid(
                "invalid_requests", "'generated_requests' needs an integer 'count'"
            )
        if spec["count"] < 0:
            return _invalid(
                "invalid_requests", "'generated_requests.count' must be >= 0"
            )
        clusters = spec.get("clusters", 3)
        if not _is_int(clusters) or not 1 <= clusters <= GENERATED_TOPICS:
            return _invalid(
                "invalid_requests",
                f"'generated_requests.clusters' must be in [1, {GENERATED_TOPICS}]",
            )
        spread = spec.get("spread", 9)
        if not _is_int(spread) or spread < 1:
            return _invalid(
                "invalid_requests", "'generated_requests.spread' must be >= 1"
            )
        return ValidationResult(is_valid=True)
    requests = data.get("requests", [])
    if not isinstance(requests, list):
        return _invalid("invalid_requests", "'requests' must be a list")
    for index, request in enumerate(requests):
        if isinstance(request, str):
            continue
        question = request.get("question") if isinstance(request, dict) else None
        if not isinstance(question, str):
            return _invalid(
                "invalid_requests",
                f"requests[{index}] must be a string or an object with 'question'",
            )
        outputs = request.get("tool_outputs", {})
        if not isinstance(outputs, dict) or not all(
            isinstance(v, str) for v in outputs.values()
        ):
            return _invalid(
                "invalid_requests",
                f"requests[{index}].tool_outputs must map ids to strings",
            )
    return ValidationResult(is_valid=True)


def validate_workload(data: Any) -> ValidationResult:
    """Validate a parsed workload configuration.

    Checks top-level keys, the agent and request sections and the ranges of
    gamma, capacity and the decode budget. Template grammar and graph shape
    are checked later when the agents are built.

    Args:
        data: Parsed JSON content.

    Returns:
        ValidationResult indicating success or failure with error details.
    """
    if not isinstance(data, dict):
        return _invalid("invalid_root", "Workload config must be a JSON object")

    unknown = sorted(set(data) - _KNOWN_KEYS)
    if unknown:
        return _invalid("unknown_keys", f"Unknown config keys: {', '.join(unknown)}")

    for section in (_validate_agents, _validate_requests):
        result = section(data)
        if not result.is_valid:
            return result

    gamma = data.get("gamma", 0.3)
    if not _is_number(gamma) or not 0.0 <= gamma <= 1.0:
        return _invalid("invalid_gamma", f"gamma must be in [0, 1], got {gamma!r}")

    capacity = data.get("capacity", 20)
    if not _is_int(capacity) or capacity < 0:
        return _invalid(
            "invalid_capacity",
            f"capacity must be a non-negative integer, got {capacity!r}",
        )

    max_new = data.get("max_new_tokens", 16)
    if not _is_int(max_new) or max_new < 0:
        return _invalid(
            "invalid_max_new_tokens",
            f"max_new_tokens must be a non-negative integer, got {max_new!r}",
        )

    seed = data.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        return _invalid(
            "invalid_seed", f"seed must be a non-negative integer, got {seed!r}"
        )

    mode = data.get("approximation", "l2")
    if mode not in APPROXIMATION_MODES:
        return _invalid(
            "invalid_approximation",
            f"approximation must be one of {', '.join(APPROXIMATION_MODES)}",
        )

    for key in ("model", "experiment"):
        if key in data and not isinstance(data[key], dict):
            return _invalid(f"invalid_{key}", f"'{key}' must be an object")

    return ValidationResult(is_valid=True)
