"""Deterministic decoder-only RoPE transformer.

Each block follows the literal residual form
``h[l+1] = h[l] + FFN(h[l] + Attn(h[l]))`` with no normalization layers.
Weights are float32; all arithmetic runs in float64.
"""

import logging
from collections.abc import Sequence

import numpy as np

from kvcomm.errors import ContextOverflowError, GeometryError
from kvcomm.geometry.fragments import KVFragment
from kvcomm.model.cache import KVCache
from kvcomm.model.config import ModelConfig
from kvcomm.model.rope import apply_rope
from kvcomm.model.tokenizer import EOS_ID, TokenSequence
from kvcomm.model.weights import ModelWeights, init_weights

logger = logging.getLogger(__name__)

_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def select_token(logits: np.ndarray) -> int:
    """Greedy choice; ties resolve to the smallest id."""
    return int(np.argmax(logits))


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / np.sum(weights, axis=-1, keepdims=True)


def _ids_of(tokens: TokenSequence | Sequence[int]) -> np.ndarray:
    raw = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    return np.asarray(list(raw), dtype=np.int64)


class Transformer:
    """Forward passes over fixed weights.

    Safe for concurrent read-only use; callers serialize decoding on any one
    KVCache.
    """

    def __init__(self, weights: ModelWeights) -> None:
        self.weights = weights
        self.config: ModelConfig = weights.config
        self._embedding = weights.embedding.astype(np.float64)
        self._unembedding = weights.unembedding.astype(np.float64)
        self._layers = [
            {
                name: getattr(layer, name).astype(np.float64)
                for name in ("w_q", "w_k", "w_v", "w_o", "w_up", "w_down")
            }
            for layer in weights.layers
        ]

    @classmethod
    def from_config(cls, config: ModelConfig) -> "Transformer":
        return cls(init_weights(config))

    def embed(self, tokens: TokenSequence | Sequence[int]) -> np.ndarray:
        """Layer-1 token embeddings, shape (N, D)."""
        ids = _ids_of(tokens)
        self._check_ids(ids)
        return self._embedding[ids]

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(
                f"Token ids must lie in [0, {self.config.vocab_size}), "
                f"got range [{ids.min()}, {ids.max()}]"
            )

    def _split_heads(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        return x.reshape(n, self.config.num_heads, self.config.head_dim).transpose(
            1, 0, 2
        )

    def _merge_heads(self, x: np.ndarray) -> np.ndarray:
        return x.transpose(1, 0, 2).reshape(x.shape[1], self.config.model_dim)

    def _ffn(self, layer: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
        return gelu(x @ layer["w_up"]) @ layer["w_down"]

    def forward_prefill(
        self,
        tokens: TokenSequence | Sequence[int],
        start_position: int = 0,
        past: KVCache | None = None,
    ) -> tuple[KVFragment, np.ndarray | None]:
        """Encode ``tokens`` after ``past`` and return their KV segment.

        Args:
            tokens: Tokens to prefill.
            start_position: Absolute position of the first token; must equal
                ``len(past)`` when a past cache is given.
            past: Optional cache the new tokens attend to. Not modified.

        Returns:
            (segment, logits) where segment holds rotated keys and raw values
            of the new tokens at every layer, and logits are those of the
            last new token (None when no tokens were given).

        Raises:
            GeometryError: If start_position disagrees with the past cache.
            ContextOverflowError: If the prefill passes max_context.
        """
        cfg = self.config
        ids = _ids_of(tokens)
        self._check_ids(ids)
        past_len = len(past) if past is not None else 0
        if past is not None and start_position != past_len:
            raise GeometryError(
                f"start_position {start_position} must equal past length {past_len}"
            )
        if start_position < 0:
            raise GeometryError(f"start_position must be >= 0, got {start_position}")
        n = ids.size
        if start_position + n > cfg.max_context:
            raise ContextOverflowError(
                f"Prefill to position {start_position + n} exceeds max_context "
                f"{cfg.max_context}"
            )
        if n == 0:
            empty = KVFragment.empty(
                cfg.num_layers,
                cfg.num_heads,
                cfg.head_dim,
                start_position,
                cfg.rope_base,
            )
            return empty, None
        shape = (cfg.num_layers, cfg.num_heads, n, cfg.head_dim)
        keys, values = np.zeros(shape), np.zeros(shape)

        positions = np.arange(start_position, start_position + n)
        # Query row i may see past rows and new rows j <= i.
        visible = np.arange(past_len + n)[None, :] <= (past_len + np.arange(n))[:, None]
        scale = 1.0 / np.sqrt(cfg.head_dim)
        h = self._embedding[ids]
        for index, layer in enumerate(self._layers):
            q = self._split_heads(h @ layer["w_q"])
            k = self._split_heads(h @ layer["w_k"])
            q = apply_rope(q, positions, cfg.rope_base)
            k = apply_rope(k, positions, cfg.rope_base)
            v = self._split_heads(h @ layer["w_v"])
            keys[index], values[index] = k, v
            if past is not None:
                k = np.concatenate([past.keys[index], k], axis=1)
                v = np.concatenate([past.values[index], v], axis=1)
            scores = np.where(visible, (q @ k.transpose(0, 2, 1)) * scale, -np.inf)
            attn = self._merge_heads(_softmax_rows(scores) @ v) @ layer["w_o"]
            h = h + self._ffn(layer, h + attn)
        logits = h[-1] @ self._unembedding
        return KVFragment(keys, values, start_position, cfg.rope_base), logits

    def prefill(
        self, tokens: TokenSequence | Sequence[int]
    ) -> tuple[KVCache, np.ndarray | None]:
        """Prefill a prompt from position 0 into a fresh cache."""
        ids = [int(i) for i in _ids_of(tokens)]
        segment, logits = self.forward_prefill(ids)
        return KVCache(segment, ids), logits

    def next_logits(self, cache: KVCache) -> np.ndarray:
        """Logits after the last cached token, computed from the cache alone.

        Runs a query-only pass for the final cached position over every
        cached key/value (its own included); nothing is written to the cache.
        """
        if len(cache) == 0:
            raise GeometryError("Cannot decode from an empty cache")
        cfg = self.config
        position = np.array([len(cache) - 1])
        scale = 1.0 / np.sqrt(cfg.head_dim)
        h = self._embedding[[cache.token_ids[-1]]]
        for index, layer in enumerate(self._layers):
            q = apply_rope(self._split_heads(h @ layer["w_q"]), position, cfg.rope_base)
            scores = (q @ cache.keys[index].transpose(0, 2, 1)) * scale
            attn = self._merge_heads(_softmax_rows(scores) @ cache.values[index])
            h = h + self._ffn(layer, h + attn @ layer["w_o"])
        return h[-1] @ self._unembedding

    def greedy_decode(
        self,
        cache: KVCache,
        max_new: int,
        first_logits: np.ndarray | None = None,
    ) -> TokenSequence:
        """Greedily extend ``cache`` by up to ``max_new`` tokens.

        Stops early at EOS (which is not emitted). Every emitted token is
        appended to the cache in place.

        Args:
            cache: Non-empty cache ending with the prompt.
            max_new: Maximum number of tokens to emit.
            first_logits: Logits for the first step if already computed by
                :meth:`next_logits`.
        """
        if max_new <= 0:
            return TokenSequence(ids=())
        logits = first_logits if first_logits is not None else self.next_logits(cache)
        emitted: list[int] = []
        for _ in range(max_new):
            token = select_token(logits)
            if token == EOS_ID:
                break
            emitted.append(token)
            segment, step_logits = self.forward_prefill([token], len(cache), cache)
            cache.append(segment, [token])
            assert step_logits is not None
            logits = step_logits
        logger.debug("Decoded %d tokens from cache of %d", len(emitted), len(cache))
        return TokenSequence(ids=tuple(emitted))
