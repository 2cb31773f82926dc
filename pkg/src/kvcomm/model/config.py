"""Model dimensions for the toy RoPE transformer."""

from dataclasses import asdict, dataclass
from typing import Any

from kvcomm.errors import ConfigError

# Byte tokenizer: 256 byte ids plus BOS and EOS.
MIN_VOCAB_SIZE = 258


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and seed of the decoder-only transformer.

    Attributes:
        num_layers: Number of transformer blocks (L).
        num_heads: Attention heads per block (H).
        head_dim: Per-head width (d). Must be even for RoPE.
        ffn_dim: Hidden width of the feed-forward block.
        vocab_size: Token vocabulary; at least 258 for the byte tokenizer.
        rope_base: RoPE frequency base (theta).
        weight_scale: Weights are drawn with std weight_scale / sqrt(D).
        seed: 64-bit generator seed.
        max_context: Largest absolute position a prefill may reach.
    """

    num_layers: int = 2
    num_heads: int = 4
    head_dim: int = 16
    ffn_dim: int = 256
    vocab_size: int = MIN_VOCAB_SIZE
    rope_base: float = 10000.0
    weight_scale: float = 0.5
    seed: int = 0
    max_context: int = 4096

    def __post_init__(self) -> None:
        counts = {
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "head_dim": self.head_dim,
            "ffn_dim": self.ffn_dim,
            "max_context": self.max_context,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.head_dim % 2:
            raise ConfigError(f"head_dim must be even for RoPE, got {self.head_dim}")
        if self.vocab_size < MIN_VOCAB_SIZE:
            raise ConfigError(
                f"vocab_size must be >= {MIN_VOCAB_SIZE}, got {self.vocab_size}"
            )
        if self.rope_base <= 0 or self.weight_scale <= 0:
            raise ConfigError("rope_base and weight_scale must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def model_dim(self) -> int:
        """Residual width D = H * d."""
        return self.num_heads * self.head_dim

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        """Build a config from a JSON mapping, rejecting unknown keys."""
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model config fields: {', '.join(unknown)}")
        return cls(**data)
