"""Anchors and capacity-bounded anchor pools."""

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from kvcomm.errors import UnknownAnchorError
from kvcomm.geometry.fragments import KVFragment, KVOffset

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 20

# (agent id, slot index) owning a pair of offsets.
OffsetKey = tuple[str, int]


class Verdict(Enum):
    """Outcome of the shareability test."""

    SHAREABLE = "shareable"
    NEW_ANCHOR = "new_anchor"


@dataclass(eq=False)
class Anchor:
    """A stored placeholder sample with its per-agent deviations.

    Attributes:
        tokens: Sample token ids; two samples are the same iff equal.
        embeddings: (L, D) layer-1 token embeddings.
        base: Standalone KV of the sample at start position 0.
        placeholder_offsets: (agent, slot) -> deviation of the sample's
            in-context KV from ``base``.
        prefix_offsets: (agent, slot) -> deviation of the following prefix
            segment from its precomputed prefix base.
        access_count: Number of Shareable turns that used this anchor.
        insertion_index: Monotone position assigned by the pool.
    """

    tokens: tuple[int, ...]
    embeddings: np.ndarray
    base: KVFragment
    placeholder_offsets: dict[OffsetKey, KVOffset] = field(default_factory=dict)
    prefix_offsets: dict[OffsetKey, KVOffset] = field(default_factory=dict)
    access_count: int = 0
    insertion_index: int = -1
    anchor_id: str = ""

    @property
    def length(self) -> int:
        return len(self.tokens)

    def has_offsets(self, agent_id: str, slot: int) -> bool:
        key = (agent_id, slot)
        return key in self.placeholder_offsets and key in self.prefix_offsets

    def add_offsets(
        self,
        agent_id: str,
        slot: int,
        placeholder_offset: KVOffset,
        prefix_offset: KVOffset,
    ) -> bool:
        """Record offsets for (agent, slot); the first write wins.

        Returns:
            True if the offsets were stored, False if already present.
        """
        if self.has_offsets(agent_id, slot):
            return False
        self.placeholder_offsets[(agent_id, slot)] = placeholder_offset
        self.prefix_offsets[(agent_id, slot)] = prefix_offset
        return True

    def nbytes(self) -> int:
        total = self.embeddings.nbytes + self.base.nbytes()
        total += sum(o.nbytes() for o in self.placeholder_offsets.values())
        total += sum(o.nbytes() for o in self.prefix_offsets.values())
        return total


class AnchorPool:
    """Anchors of one placeholder name, never more than ``capacity``.

    Many readers or one writer: mutations take the pool lock.
    """

    def __init__(self, name: str, capacity: int = DEFAULT_CAPACITY) -> None:
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.name = name
        self.capacity = capacity
        self.anchors: list[Anchor] = []
        self._next_index = 0
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self.anchors)

    def get(self, anchor_id: str) -> Anchor:
        for anchor in self.anchors:
            if anchor.anchor_id == anchor_id:
                return anchor
        raise UnknownAnchorError(f"No anchor {anchor_id!r} in pool {self.name!r}")

    def find_by_tokens(self, tokens: tuple[int, ...]) -> Anchor | None:
        for anchor in self.anchors:
            if anchor.tokens == tokens:
                return anchor
        return None

    def max_length(self) -> int:
        return max((a.length for a in self.anchors), default=0)

    def nbytes(self) -> int:
        return sum(a.nbytes() for a in self.anchors)

    def insert(self, anchor: Anchor) -> str | None:
        """Append ``anchor`` and evict down to capacity.

        The victim is the existing anchor with the lowest access count, ties
        going to the earliest inserted. The new anchor is never the victim
        unless the capacity is zero.

        Returns:
            The evicted anchor id, or None.
        """
        with self._lock:
            anchor.insertion_index = self._next_index
            self._next_index += 1
            if not anchor.anchor_id:
                anchor.anchor_id = f"{self.name}#{anchor.insertion_index}"
            self.anchors.append(anchor)
            if len(self.anchors) <= self.capacity:
                return None
            candidates = self.anchors[:-1] or self.anchors
            victim = min(candidates, key=lambda a: (a.access_count, a.insertion_index))
            self.anchors.remove(victim)
            logger.debug(
                "Pool %s evicted %s (accesses=%d)",
                self.name,
                victim.anchor_id,
                victim.access_count,
            )
            return victim.anchor_id

    def record_access(self, anchor_ids: list[str] | tuple[str, ...]) -> None:
        """Count one access for each id.

        Raises:
            UnknownAnchorError: If an id is not in the pool.
        """
        with self._lock:
            targets = [self.get(anchor_id) for anchor_id in anchor_ids]
            for anchor in targets:
                anchor.access_count += 1


def insert_anchor(pool: AnchorPool, anchor: Anchor) -> str | None:
    """Insert into ``pool``; returns the evicted anchor id if any."""
    return pool.insert(anchor)


def record_access(pool: AnchorPool, anchor_ids: list[str] | tuple[str, ...]) -> None:
    """Increment the access count of every listed anchor."""
    pool.record_access(anchor_ids)
