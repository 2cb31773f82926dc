"""Three-level shared KV store: (owner, kind, index) -> immutable entry."""

import logging
import threading
from dataclasses import dataclass
from enum import Enum

from kvcomm.errors import ContractError, StoreWriteError
from kvcomm.geometry.fragments import KVFragment

logger = logging.getLogger(__name__)

USER_INPUT_KEY = "user_input"


class EntryKind(Enum):
    """Level-2 key of the shared store."""

    RESPONSE = "response"
    CONDITION = "condition"
    PREFIX = "prefix"
    QUESTION = "question"


@dataclass(frozen=True, eq=False)
class StoreEntry:
    """Tokens of a sample, with a KV fragment when one is attached."""

    tokens: tuple[int, ...]
    kv: KVFragment | None = None

    def nbytes(self) -> int:
        return self.kv.nbytes() if self.kv is not None else 0


class SharedKVStore:
    """Write-once store addressed by (level 1, level 2, level 3).

    Level 1 is an agent id or ``user_input``; level 2 an EntryKind; level 3
    a turn index (responses, conditions, questions) or slot index (prefix
    bases). Placeholder base KVs are kept in a separate registry keyed by
    the sample's token tuple so one sample has exactly one base.
    """

    def __init__(self) -> None:
        self._entries: dict[tuple[str, EntryKind, int], StoreEntry] = {}
        self._bases: dict[tuple[int, ...], KVFragment] = {}
        self._lock = threading.RLock()
        self.base_computations = 0

    def write(self, owner: str, kind: EntryKind, index: int, entry: StoreEntry) -> None:
        """Store an entry.

        Raises:
            StoreWriteError: If the path was already written.
        """
        path = (owner, kind, index)
        with self._lock:
            if self.contains(owner, kind, index):
                raise StoreWriteError(
                    f"Store entry ({owner}, {kind.value}, {index}) already written"
                )
            self._entries[path] = entry

    def read(self, owner: str, kind: EntryKind, index: int) -> StoreEntry | None:
        return self._entries.get((owner, kind, index))

    def contains(self, owner: str, kind: EntryKind, index: int) -> bool:
        return (owner, kind, index) in self._entries

    def prefix_base(self, agent_id: str, slot: int) -> KVFragment:
        """KV of an agent's prefix segment.

        Raises:
            ContractError: ``PREFIX_BASE_MISSING`` if no prefix KV was stored
                for the slot.
        """
        entry = self.read(agent_id, EntryKind.PREFIX, slot)
        if entry is None or entry.kv is None:
            raise ContractError(
                f"No prefix base for agent {agent_id!r} slot {slot}",
                error_type="PREFIX_BASE_MISSING",
            )
        return entry.kv

    def missing_bases(self, samples: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
        """Distinct samples without a base, in first-seen order."""
        seen: dict[tuple[int, ...], None] = {}
        for tokens in samples:
            if not self.has_base(tokens):
                seen.setdefault(tokens, None)
        return list(seen)

    def register_base(self, tokens: tuple[int, ...], base: KVFragment) -> None:
        """Record the standalone base of ``tokens``; the first one is kept."""
        with self._lock:
            if self.has_base(tokens):
                return
            self._bases[tokens] = base
            self.base_computations += 1

    def has_base(self, tokens: tuple[int, ...]) -> bool:
        return tokens in self._bases

    def get_base(self, tokens: tuple[int, ...]) -> KVFragment:
        return self._bases[tokens]

    def nbytes(self) -> int:
        total = sum(e.nbytes() for e in self._entries.values())
        return total + sum(b.nbytes() for b in self._bases.values())
