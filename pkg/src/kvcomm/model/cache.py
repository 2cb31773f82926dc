"""Mutable KV cache used by prefill and greedy decoding."""

from dataclasses import dataclass, field

import numpy as np

from kvcomm.errors import GeometryError
from kvcomm.geometry.fragments import KVFragment


@dataclass
class KVCache:
    """Growing KV cache that starts at position 0.

    Holds the token id at every cached position so decoding can resume from
    a cache that was reconstructed rather than prefilled. A single cache must
    not be extended from two threads at once.
    """

    fragment: KVFragment
    token_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.fragment.start_position != 0:
            raise GeometryError(
                f"KVCache must start at position 0, got {self.fragment.start_position}"
            )
        if len(self.token_ids) != self.fragment.length:
            raise GeometryError(
                f"{len(self.token_ids)} token ids for {self.fragment.length} positions"
            )

    def __len__(self) -> int:
        return self.fragment.length

    @property
    def keys(self) -> np.ndarray:
        return self.fragment.keys

    @property
    def values(self) -> np.ndarray:
        return self.fragment.values

    def append(self, segment: KVFragment, token_ids: list[int]) -> None:
        """Extend the cache in place with a fragment that starts at its end."""
        if segment.start_position != len(self):
            raise GeometryError(
                f"Segment starts at {segment.start_position}, cache ends at {len(self)}"
            )
        self.fragment = KVFragment(
            np.concatenate([self.fragment.keys, segment.keys], axis=2),
            np.concatenate([self.fragment.values, segment.values], axis=2),
            0,
            self.fragment.rope_base,
        )
        self.token_ids.extend(token_ids)

    def nbytes(self) -> int:
        return self.fragment.nbytes()
