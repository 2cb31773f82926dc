"""Exception taxonomy for kvcomm.

Every error carries an ``error_type`` code. The CLI maps configuration
errors to exit code 2 and runtime contract violations to exit code 3.
"""


class KVCommError(Exception):
    """Base class for kvcomm failures.

    Attributes:
        error_type: Stable error code used in logs and CLI diagnostics.
    """

    default_error_type: str = "KVCOMM_ERROR"

    def __init__(self, message: str, error_type: str | None = None) -> None:
        self.error_type = error_type or self.default_error_type
        super().__init__(message)


class ConfigError(KVCommError):
    """Raised when a workload or model configuration is invalid."""

    default_error_type = "CONFIG_INVALID"


class TemplateParseError(ConfigError):
    """Raised when a prompt template violates the placeholder grammar."""

    default_error_type = "TEMPLATE_INVALID"

    def __init__(self, message: str, token: str = "") -> None:
        self.token = token
        super().__init__(message)


class GraphError(ConfigError):
    """Raised when the agent graph is cyclic or references unknown agents."""

    default_error_type = "GRAPH_INVALID"


class ContractError(KVCommError):
    """Raised when a runtime contract is violated."""

    default_error_type = "CONTRACT_VIOLATION"


class GeometryError(ContractError):
    """Raised on shape, length or position mismatches between fragments."""

    default_error_type = "GEOMETRY_MISMATCH"


class ContextOverflowError(ContractError):
    """Raised when a prefill would run past the configured context length."""

    default_error_type = "CONTEXT_OVERFLOW"


class MissingOffsetError(ContractError):
    """Raised when a matched anchor lacks the offset for an (agent, slot)."""

    default_error_type = "OFFSET_MISSING"


class SchedulingError(ContractError):
    """Raised when an agent runs before its upstream responses exist."""

    default_error_type = "SCHEDULING_ERROR"


class StoreWriteError(ContractError):
    """Raised on a second write to an immutable shared-store entry."""

    default_error_type = "STORE_IMMUTABLE"


class UnknownAnchorError(ContractError):
    """Raised when an anchor id is not present in a pool."""

    default_error_type = "ANCHOR_UNKNOWN"
