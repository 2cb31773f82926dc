"""Anchor-based KV-cache communication across a graph of agents.

Each request is one turn. Agents run in topological order; for every agent
the runner resolves its placeholders, makes sure each sample has a
standalone base KV, and asks the anchor pools whether every placeholder is
shareable. If so the prompt cache is assembled from precomputed bases and
interpolated offsets and decoding starts without any prefill. Otherwise the
prompt is prefilled densely and the measured offsets are written back into
the pools so later turns can reuse them.
"""

import logging
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, TypeVar

import numpy as np

from kvcomm.anchors.approximation import (
    approximate_placeholder_kv,
    approximate_prefix_kv,
)
from kvcomm.anchors.models import DEFAULT_CAPACITY, Anchor, AnchorPool, Verdict
from kvcomm.anchors.prediction import MatchResult, predict_shareability
from kvcomm.anchors.weighting import WeightingMode
from kvcomm.analysis.stats import similarity_by_layer
from kvcomm.errors import (
    ContextOverflowError,
    GeometryError,
    KVCommError,
    SchedulingError,
)
from kvcomm.geometry.fragments import (
    KVFragment,
    SegmentKind,
    SegmentSpan,
    concat_fragments,
    max_abs_difference,
    measure_offset,
    slice_cache,
)
from kvcomm.model.cache import KVCache
from kvcomm.model.tokenizer import BOS_ID, TokenSequence, detokenize, encode
from kvcomm.model.transformer import Transformer
from kvcomm.orchestrator.graph import AgentGraph, AgentSpec
from kvcomm.orchestrator.store import (
    USER_INPUT_KEY,
    EntryKind,
    SharedKVStore,
    StoreEntry,
)
from kvcomm.orchestrator.templates import PlaceholderKind, PlaceholderRef
from kvcomm.orchestrator.workload import Request
from kvcomm.state.machine import TurnMachine, TurnSink
from kvcomm.state.models import Branch, Event, SegmentRecord, TurnState

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class PromptLayout:
    """Instantiated prompt tokens and the span of every segment.

    ``spans`` alternates p_0, phi_1, p_1, ..., phi_n, p_n.
    """

    tokens: list[int]
    spans: list[SegmentSpan]
    samples: list[tuple[int, ...]]

    @property
    def length(self) -> int:
        return len(self.tokens)

    def placeholder_span(self, slot: int) -> SegmentSpan:
        return self.spans[2 * slot - 1]

    def prefix_span(self, slot: int) -> SegmentSpan:
        return self.spans[2 * slot]


@dataclass
class WorkloadResult:
    """Turns processed by run_workload plus aggregate metrics."""

    turns: list[TurnState] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)


def prefix_token_lists(agent: AgentSpec) -> list[list[int]]:
    """Token ids of p_0 (with BOS) through p_n."""
    prefixes = agent.parsed.prefixes
    return [[BOS_ID] + encode(prefixes[0])] + [encode(p) for p in prefixes[1:]]


def init_system(
    model: Transformer, graph: AgentGraph, store: Optional[SharedKVStore] = None
) -> SharedKVStore:
    """Precompute every agent's prefix bases into a shared store.

    p_0 is prefilled alone; every later prefix p_i is prefilled after p_0
    and sliced out, so its base sits at positions starting at len(p_0).

    Args:
        model: Transformer used for prefills.
        graph: Validated (acyclic) agent graph.
        store: Store to seed; a new one is created when omitted.

    Returns:
        The seeded store.
    """
    store = store or SharedKVStore()
    for agent in graph.ordered():
        prefixes = prefix_token_lists(agent)
        system = prefixes[0]
        system_kv, _ = model.forward_prefill(system)
        store.write(
            agent.agent_id, EntryKind.PREFIX, 0, StoreEntry(tuple(system), system_kv)
        )
        for slot, tokens in enumerate(prefixes[1:], start=1):
            full, _ = model.forward_prefill(system + tokens)
            span = SegmentSpan(len(system), len(tokens), SegmentKind.PREFIX, slot)
            store.write(
                agent.agent_id,
                EntryKind.PREFIX,
                slot,
                StoreEntry(tuple(tokens), slice_cache(full, span)),
            )
        logger.debug(
            "Prefix bases ready for agent %s (%d segments)",
            agent.agent_id,
            len(prefixes),
        )
    return store


def layout_prompt(
    agent: AgentSpec, samples: Sequence[Sequence[int]], max_context: int
) -> PromptLayout:
    """Interleave prefix tokens with placeholder samples.

    Raises:
        ContextOverflowError: If the prompt is longer than ``max_context``.
    """
    prefixes = prefix_token_lists(agent)
    if len(samples) != len(prefixes) - 1:
        raise GeometryError(
            f"Agent {agent.agent_id} has {len(prefixes) - 1} placeholders, "
            f"got {len(samples)} samples"
        )
    tokens: list[int] = list(prefixes[0])
    spans = [SegmentSpan(0, len(prefixes[0]), SegmentKind.PREFIX, 0)]
    for slot, (sample, prefix) in enumerate(zip(samples, prefixes[1:]), start=1):
        spans.append(
            SegmentSpan(len(tokens), len(sample), SegmentKind.PLACEHOLDER, slot)
        )
        tokens.extend(sample)
        spans.append(SegmentSpan(len(tokens), len(prefix), SegmentKind.PREFIX, slot))
        tokens.extend(prefix)
    if len(tokens) > max_context:
        raise ContextOverflowError(
            f"Prompt of agent {agent.agent_id} has {len(tokens)} tokens, "
            f"max_context is {max_context}"
        )
    return PromptLayout(tokens, spans, [tuple(s) for s in samples])


class KVCommSystem:
    """Runs requests through an agent graph with anchor-based KV reuse."""

    def __init__(
        self,
        model: Transformer,
        graph: AgentGraph,
        gamma: float = 0.3,
        capacity: int = DEFAULT_CAPACITY,
        max_new_tokens: int = 16,
        mode: WeightingMode = WeightingMode.L2,
        reuse_enabled: bool = True,
        condition_default: str = "",
        threads: int = 1,
        shadow_dense: bool = False,
        sink: Optional[TurnSink] = None,
    ) -> None:
        """Initialize the system and precompute prefix bases.

        Args:
            model: Transformer shared by every agent.
            graph: Agent graph.
            gamma: Entropy threshold factor in [0, 1]; 0 disables sharing.
            capacity: Anchor pool capacity.
            max_new_tokens: Greedy decode budget per agent turn.
            mode: Anchor weighting variant.
            reuse_enabled: False runs every turn densely without touching
                the anchor pools.
            condition_default: Tool output used when a request gives none.
            threads: Worker threads for base prefills and per-placeholder work.
            shadow_dense: Also prefill reused prompts densely and record the
                reconstruction error.
            sink: Receives finished agent turns (e.g. TranscriptStorage).

        Raises:
            ValueError: If gamma is outside [0, 1] or capacity is negative.
        """
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {gamma}")
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.model = model
        self.graph = graph
        self.gamma = gamma
        self.capacity = capacity
        self.max_new_tokens = max_new_tokens
        self.mode = mode
        self.reuse_enabled = reuse_enabled
        self.condition_default = condition_default
        self.threads = max(1, threads)
        self.shadow_dense = shadow_dense
        self.machine = TurnMachine(sink=sink)
        self.store = init_system(model, graph)
        self.pools: dict[str, AnchorPool] = {
            name: AnchorPool(name, capacity) for name in sorted(graph.consumed_names())
        }
        self.shadow_errors: list[dict[str, Any]] = []
        self.shadow_records: list[dict[str, Any]] = []
        self._embeddings: dict[tuple[int, ...], np.ndarray] = {}
        logger.info(
            "KVComm system ready: %d agents, %d pools, gamma=%.2f, capacity=%d",
            len(graph),
            len(self.pools),
            gamma,
            capacity,
        )

    # ------------------------------------------------------------------
    # helpers

    def _map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def _standalone_base(self, tokens: tuple[int, ...]) -> KVFragment:
        fragment, _ = self.model.forward_prefill(list(tokens))
        return fragment

    def embeddings(self, tokens: tuple[int, ...]) -> np.ndarray:
        cached = self._embeddings.get(tokens)
        if cached is None:
            cached = self.model.embed(tokens)
            self._embeddings[tokens] = cached
        return cached

    def _history_turn(self, ref: PlaceholderRef, turn: int) -> int | None:
        assert ref.turn is not None
        target = turn + ref.turn if ref.turn < 0 else ref.turn
        return target if 0 <= target < turn else None

    def resolve(self, ref: PlaceholderRef, turn: int, request: Request) -> list[int]:
        """Tokens that fill ``ref`` on ``turn``.

        Raises:
            SchedulingError: If a current response is not yet in the store.
        """
        if ref.kind is PlaceholderKind.USER_QUESTION:
            return encode(request.question)
        if ref.kind is PlaceholderKind.AGENT_CURRENT:
            entry = self.store.read(ref.source, EntryKind.RESPONSE, turn)
            if entry is None:
                raise SchedulingError(
                    f"Response of agent {ref.source!r} for turn {turn} is not available"
                )
            return list(entry.tokens)
        if ref.kind is PlaceholderKind.CONDITION_CURRENT:
            entry = self.store.read(ref.source, EntryKind.CONDITION, turn)
            if entry is None:
                text = request.tool_outputs.get(ref.source, self.condition_default)
                entry = StoreEntry(tuple(encode(text)))
                self.store.write(ref.source, EntryKind.CONDITION, turn, entry)
            return list(entry.tokens)
        target = self._history_turn(ref, turn)
        if target is None:
            return []
        kind = (
            EntryKind.CONDITION
            if ref.kind is PlaceholderKind.CONDITION_HISTORY
            else EntryKind.RESPONSE
        )
        entry = self.store.read(ref.source, kind, target)
        return list(entry.tokens) if entry is not None else []

    # ------------------------------------------------------------------
    # operations

    def ensure_placeholder_bases(self, samples: Sequence[tuple[int, ...]]) -> int:
        """Prefill standalone bases for samples that have none.

        Distinct samples share one base; missing ones are computed in
        parallel.

        Returns:
            Number of bases computed.
        """
        missing = self.store.missing_bases(list(samples))
        for tokens, base in zip(missing, self._map(self._standalone_base, missing)):
            self.store.register_base(tokens, base)
        if missing:
            logger.debug("Computed %d placeholder bases", len(missing))
        return len(missing)

    def predict(
        self,
        agent: AgentSpec,
        layout: PromptLayout,
        mode: Optional[WeightingMode] = None,
    ) -> list[MatchResult]:
        """Shareability verdict for every placeholder of ``agent``."""
        mode = mode or self.mode
        if not self.reuse_enabled:
            return [
                MatchResult(Verdict.NEW_ANCHOR, reason="reuse_disabled")
                for _ in layout.samples
            ]
        refs = agent.parsed.placeholders

        def check(slot: int) -> MatchResult:
            return predict_shareability(
                self.embeddings(layout.samples[slot - 1]),
                self.pools[refs[slot - 1].name],
                self.gamma,
                requester=(agent.agent_id, slot),
                mode=mode,
            )

        return self._map(check, range(1, len(refs) + 1))

    def build_reuse_cache(
        self, agent: AgentSpec, layout: PromptLayout, matches: Sequence[MatchResult]
    ) -> KVFragment:
        """Assemble the prompt KV from bases and interpolated offsets.

        Raises:
            MissingOffsetError: If a matched anchor lacks an offset.
            GeometryError: If the parts do not cover [0, prompt length).
        """
        agent_id = agent.agent_id

        def approximate(slot: int) -> tuple[KVFragment, KVFragment]:
            match = matches[slot - 1]
            placeholder = approximate_placeholder_kv(
                self.store.get_base(layout.samples[slot - 1]),
                match.anchors,
                match.per_position_weights,
                agent_id,
                slot,
                layout.placeholder_span(slot).start,
            )
            prefix = approximate_prefix_kv(
                self.store.prefix_base(agent_id, slot),
                match.anchors,
                match.scalar_weights,
                agent_id,
                slot,
                layout.prefix_span(slot).start,
            )
            return placeholder, prefix

        parts = [self.store.prefix_base(agent_id, 0)]
        for placeholder, prefix in self._map(approximate, range(1, len(matches) + 1)):
            parts.extend([placeholder, prefix])
        fragment = concat_fragments(parts)
        if fragment.start_position != 0 or fragment.end_position != layout.length:
            raise GeometryError(
                f"Reconstructed cache covers [{fragment.start_position}, "
                f"{fragment.end_position}), prompt has {layout.length} tokens"
            )
        return fragment

    def dense_generate(
        self, layout: PromptLayout
    ) -> tuple[TokenSequence, list[KVFragment], float]:
        """Prefill the whole prompt and decode greedily.

        Returns:
            (response, per-segment real fragments, seconds to first token).
        """
        started = time.perf_counter()
        cache, _ = self.model.prefill(layout.tokens)
        parts = [slice_cache(cache.fragment, span) for span in layout.spans]
        logits = self.model.next_logits(cache)
        ttft = time.perf_counter() - started
        response = self.model.greedy_decode(cache, self.max_new_tokens, logits)
        return response, parts, ttft

    def _reuse_generate(
        self,
        agent: AgentSpec,
        turn: int,
        layout: PromptLayout,
        matches: list[MatchResult],
    ) -> tuple[TokenSequence, float]:
        started = time.perf_counter()
        fragment = self.build_reuse_cache(agent, layout, matches)
        cache = KVCache(fragment, list(layout.tokens))
        logits = self.model.next_logits(cache)
        ttft = time.perf_counter() - started
        for ref, match in zip(agent.parsed.placeholders, matches):
            self.pools[ref.name].record_access(match.anchor_ids)
        if self.shadow_dense:
            self._shadow_profile(agent, turn, layout, fragment)
        return self.model.greedy_decode(cache, self.max_new_tokens, logits), ttft

    def plain_reuse_cache(self, agent: AgentSpec, layout: PromptLayout) -> KVFragment:
        """Bases of every segment side by side, without offsets or re-rotation."""
        parts = [self.store.prefix_base(agent.agent_id, 0)]
        for slot, tokens in enumerate(layout.samples, start=1):
            parts.append(self.store.get_base(tokens))
            parts.append(self.store.prefix_base(agent.agent_id, slot))
        return KVFragment(
            np.concatenate([p.keys for p in parts], axis=2),
            np.concatenate([p.values for p in parts], axis=2),
            0,
            parts[0].rope_base,
        )

    def _shadow_profile(
        self, agent: AgentSpec, turn: int, layout: PromptLayout, fragment: KVFragment
    ) -> None:
        """Compare reconstructions under every weighting mode with dense prefill."""
        dense, _ = self.model.forward_prefill(layout.tokens)
        candidates: dict[str, KVFragment] = {self.mode.value: fragment}
        for mode in WeightingMode:
            if mode is self.mode:
                continue
            matches = self.predict(agent, layout, mode)
            if all(m.shareable for m in matches):
                candidates[mode.value] = self.build_reuse_cache(agent, layout, matches)
        candidates["plain"] = self.plain_reuse_cache(agent, layout)
        self.shadow_errors.append(
            {
                "turn": turn,
                "agent_id": agent.agent_id,
                "max_abs_error": max_abs_difference(fragment, dense),
            }
        )
        for name, approx in candidates.items():
            for row in similarity_by_layer(
                approx.keys, approx.values, dense.keys, dense.values
            ):
                self.shadow_records.append(
                    {"turn": turn, "agent_id": agent.agent_id, "mode": name, **row}
                )

    def _write_offsets(
        self,
        agent: AgentSpec,
        layout: PromptLayout,
        matches: list[MatchResult],
        parts: list[KVFragment],
    ) -> None:
        """Store measured offsets for placeholders that got a NewAnchor verdict."""
        agent_id = agent.agent_id
        for slot, (ref, match) in enumerate(
            zip(agent.parsed.placeholders, matches), start=1
        ):
            if match.shareable:
                continue
            tokens = layout.samples[slot - 1]
            base = self.store.get_base(tokens)
            placeholder_offset = measure_offset(parts[2 * slot - 1], base)
            prefix_offset = measure_offset(
                parts[2 * slot], self.store.prefix_base(agent_id, slot)
            )
            pool = self.pools[ref.name]
            anchor = pool.find_by_tokens(tokens)
            if anchor is None:
                anchor = Anchor(tokens, self.embeddings(tokens), base)
                anchor.add_offsets(agent_id, slot, placeholder_offset, prefix_offset)
                evicted = pool.insert(anchor)
                logger.debug(
                    "New anchor %s in pool %s (evicted %s)",
                    anchor.anchor_id,
                    pool.name,
                    evicted,
                )
            else:
                anchor.add_offsets(agent_id, slot, placeholder_offset, prefix_offset)

    def _share_response(
        self, agent: AgentSpec, turn: int, response: TokenSequence
    ) -> Event:
        """Publish the response; NewAnchor responses also seed their pool."""
        tokens = tuple(response.ids)
        pool = self.pools.get(f"agent_{agent.agent_id}_current")
        if pool is None or not self.reuse_enabled:
            self.store.write(
                agent.agent_id, EntryKind.RESPONSE, turn, StoreEntry(tokens)
            )
            return Event.RESPONSE_SHARED
        self.ensure_placeholder_bases([tokens])
        base = self.store.get_base(tokens)
        self.store.write(
            agent.agent_id, EntryKind.RESPONSE, turn, StoreEntry(tokens, base)
        )
        match = predict_shareability(
            self.embeddings(tokens), pool, self.gamma, mode=self.mode
        )
        if match.shareable or pool.find_by_tokens(tokens) is not None:
            return Event.RESPONSE_SHARED
        pool.insert(Anchor(tokens, self.embeddings(tokens), base))
        return Event.RESPONSE_ANCHORED

    def run_turn(self, agent: AgentSpec, turn: int, request: Request) -> TokenSequence:
        """Run one agent on one turn.

        Returns:
            The agent's greedy response.

        Raises:
            SchedulingError: If an upstream agent has not finished this turn.
            MissingOffsetError: If a matched anchor lacks an offset.
        """
        agent_id = agent.agent_id
        for upstream in agent.upstream:
            if not self.machine.has_finished(turn, upstream):
                raise SchedulingError(
                    f"Agent {agent_id!r} scheduled before upstream {upstream!r} "
                    f"finished turn {turn}"
                )
        started = time.perf_counter()
        try:
            samples = [
                self.resolve(ref, turn, request) for ref in agent.parsed.placeholders
            ]
            layout = layout_prompt(agent, samples, self.model.config.max_context)
            self.ensure_placeholder_bases(layout.samples)
            self.machine.transition(
                turn,
                agent_id,
                Event.BASES_ENSURED,
                placeholder_tokens=[list(s) for s in layout.samples],
                prompt_length=layout.length,
            )
            matches = self.predict(agent, layout)
            verdicts = [m.verdict.value for m in matches]
            matched_ids = [list(m.anchor_ids) for m in matches]

            if matches and all(m.shareable for m in matches):
                self.machine.transition(
                    turn,
                    agent_id,
                    Event.ALL_SHAREABLE,
                    branch=Branch.REUSE,
                    verdicts=verdicts,
                    matched_anchor_ids=matched_ids,
                )
                response, ttft = self._reuse_generate(
                    agent, turn, layout, matches
                )
                segments = self._segment_records(layout, reused=True)
                prefilled, reused = 0, layout.length
            else:
                self.machine.transition(
                    turn,
                    agent_id,
                    Event.FALLBACK_REQUIRED,
                    branch=Branch.DENSE_FALLBACK,
                    verdicts=verdicts,
                    matched_anchor_ids=matched_ids,
                )
                response, parts, ttft = self.dense_generate(layout)
                if self.reuse_enabled:
                    self._write_offsets(agent, layout, matches, parts)
                segments = self._segment_records(layout, reused=False)
                prefilled, reused = layout.length, 0

            self.machine.transition(
                turn,
                agent_id,
                Event.DECODE_FINISHED,
                response_tokens=list(response.ids),
                response_text=detokenize(response),
                segments=segments,
                prefilled_tokens=prefilled,
                reused_tokens=reused,
                ttft_seconds=ttft,
            )
            event = self._share_response(agent, turn, response)
            state = self.machine.transition(
                turn,
                agent_id,
                event,
                total_seconds=time.perf_counter() - started,
            )
        except KVCommError as e:
            current = self.machine.get_turn(turn, agent_id)
            if self.machine.can_transition(current.phase, Event.FAILED):
                self.machine.transition(
                    turn,
                    agent_id,
                    Event.FAILED,
                    error_message=str(e),
                    error_type=e.error_type,
                )
            raise
        logger.info(
            "Turn %d agent %s: %s (%d prefilled, %d reused)",
            turn,
            agent_id,
            state.branch.value if state.branch else "none",
            prefilled,
            reused,
        )
        return response

    def _segment_records(
        self, layout: PromptLayout, reused: bool
    ) -> list[SegmentRecord]:
        records = []
        for span in layout.spans:
            if not reused:
                source = "prefilled"
            elif span.kind is SegmentKind.PREFIX and span.slot == 0:
                source = "base"
            else:
                source = "approximated"
            records.append(
                SegmentRecord(
                    span.kind.value, span.slot, span.start, span.length, source
                )
            )
        return records

    def run_request(self, turn: int, request: Request) -> TurnState:
        """Run every agent of the graph on one request."""
        logger.info("Request %d: %r", turn, request.question)
        self.store.write(
            USER_INPUT_KEY,
            EntryKind.QUESTION,
            turn,
            StoreEntry(tuple(encode(request.question))),
        )
        state = TurnState(turn=turn, question=request.question)
        for agent in self.graph.ordered():
            self.run_turn(agent, turn, request)
            state.agents[agent.agent_id] = self.machine.get_turn(turn, agent.agent_id)
        return state

    def run_workload(self, requests: Sequence[Request]) -> WorkloadResult:
        """Process requests in order, one turn each.

        Returns:
            WorkloadResult with the turn states and aggregate metrics.
        """
        result = WorkloadResult()
        for turn, request in enumerate(requests):
            result.turns.append(self.run_request(turn, request))
        result.metrics = self.metrics(result.turns)
        logger.info(
            "Workload done: %d requests, reuse rate %.3f",
            len(requests),
            result.metrics["reuse_rate"],
        )
        return result

    def metrics(self, turns: Sequence[TurnState]) -> dict[str, Any]:
        """Reuse rate, token ledger, memory and timing aggregates."""
        agent_turns = [a for t in turns for a in t.agents.values()]
        reused = [a for a in agent_turns if a.branch is Branch.REUSE]
        dense = [a for a in agent_turns if a.branch is Branch.DENSE_FALLBACK]

        def mean_ttft(group: list[Any]) -> float | None:
            return float(np.mean([a.ttft_seconds for a in group])) if group else None

        return {
            "requests": len(turns),
            "agent_turns": len(agent_turns),
            "reused_agent_turns": len(reused),
            "reuse_rate": len(reused) / len(agent_turns) if agent_turns else 0.0,
            "prefilled_tokens": sum(a.prefilled_tokens for a in agent_turns),
            "reused_tokens": sum(a.reused_tokens for a in agent_turns),
            "prompt_tokens": sum(a.prompt_length for a in agent_turns),
            "base_computations": self.store.base_computations,
            "store_bytes": self.store.nbytes(),
            "pool_bytes": sum(p.nbytes() for p in self.pools.values()),
            "anchors": {name: len(p) for name, p in sorted(self.pools.items())},
            "mean_ttft_reuse": mean_ttft(reused),
            "mean_ttft_dense": mean_ttft(dense),
            "shadow_max_abs_error": max(
                (e["max_abs_error"] for e in self.shadow_errors), default=None
            ),
        }
