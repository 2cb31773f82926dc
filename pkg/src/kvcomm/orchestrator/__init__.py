"""Agent graph, templates, shared store and the turn runner."""

from kvcomm.orchestrator.graph import AgentGraph, AgentSpec
from kvcomm.orchestrator.runner import (
    KVCommSystem,
    PromptLayout,
    WorkloadResult,
    init_system,
    layout_prompt,
)
from kvcomm.orchestrator.store import EntryKind, SharedKVStore, StoreEntry
from kvcomm.orchestrator.templates import (
    ParsedTemplate,
    PlaceholderKind,
    PlaceholderRef,
    parse_template,
)
from kvcomm.orchestrator.workload import (
    Request,
    clustered_requests,
    fully_connected_agents,
)

__all__ = [
    "AgentGraph",
    "AgentSpec",
    "EntryKind",
    "KVCommSystem",
    "ParsedTemplate",
    "PlaceholderKind",
    "PlaceholderRef",
    "PromptLayout",
    "Request",
    "SharedKVStore",
    "StoreEntry",
    "WorkloadResult",
    "clustered_requests",
    "fully_connected_agents",
    "init_system",
    "layout_prompt",
    "parse_template",
]
