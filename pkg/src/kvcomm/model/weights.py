"""Deterministic weight generation and the KVC1 weight file format.

Every parameter entry is drawn from a SplitMix64 stream keyed by
(seed, parameter name, flat index) and mapped to a standard normal with
Box-Muller, so the same (config, seed) yields the same bytes on any
platform regardless of generation order.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from kvcomm.errors import ConfigError
from kvcomm.model.config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"KVC1"
# Config fields in declaration order: five uint32 counts, rope_base and
# weight_scale as float64, seed as uint64, max_context as uint32.
HEADER_FORMAT = "<IIIIIddQI"

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a64(name: str) -> int:
    value = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        value = ((value ^ byte) * _FNV_PRIME) & _MASK64
    return value


def _mix64_scalar(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def splitmix_normals(seed: int, name: str, count: int) -> np.ndarray:
    """Return ``count`` standard normals for parameter ``name``.

    Entry i consumes stream outputs 2i+1 and 2i+2 of the SplitMix64
    sequence whose key mixes the seed with the FNV-1a hash of the name.

    Args:
        seed: 64-bit generator seed.
        name: Parameter name, e.g. ``"layers.0.w_q"``.
        count: Number of normals to draw.

    Returns:
        float64 array of shape (count,).
    """
    key = _mix64_scalar((seed ^ _fnv1a64(name)) & _MASK64)
    steps = np.arange(1, 2 * count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = np.uint64(key) + steps * np.uint64(_GOLDEN)
    bits = _mix64(states) >> np.uint64(11)
    scale = 2.0**-53
    u1 = (bits[0::2].astype(np.float64) + 1.0) * scale
    u2 = bits[1::2].astype(np.float64) * scale
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass
class LayerWeights:
    """Projection and feed-forward matrices of one block (row-vector convention)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray


@dataclass
class ModelWeights:
    """All parameters of the toy transformer, stored as float32."""

    config: ModelConfig
    embedding: np.ndarray
    layers: list[LayerWeights]
    unembedding: np.ndarray

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield parameters in the fixed KVC1 file order."""
        yield "embedding", self.embedding
        for index, layer in enumerate(self.layers):
            for field_name in ("w_q", "w_k", "w_v", "w_o", "w_up", "w_down"):
                yield f"layers.{index}.{field_name}", getattr(layer, field_name)
        yield "unembedding", self.unembedding

    def nbytes(self) -> int:
        return sum(array.nbytes for _, array in self.named_parameters())


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    """Names and shapes of every parameter, in file order."""
    d_model, ffn, vocab = config.model_dim, config.ffn_dim, config.vocab_size
    shapes: list[tuple[str, tuple[int, int]]] = [("embedding", (vocab, d_model))]
    for index in range(config.num_layers):
        prefix = f"layers.{index}"
        shapes += [
            (f"{prefix}.w_q", (d_model, d_model)),
            (f"{prefix}.w_k", (d_model, d_model)),
            (f"{prefix}.w_v", (d_model, d_model)),
            (f"{prefix}.w_o", (d_model, d_model)),
            (f"{prefix}.w_up", (d_model, ffn)),
            (f"{prefix}.w_down", (ffn, d_model)),
        ]
    shapes.append(("unembedding", (d_model, vocab)))
    return shapes


def _assemble(config: ModelConfig, arrays: dict[str, np.ndarray]) -> ModelWeights:
    layers = [
        LayerWeights(
            **{
                field_name: arrays[f"layers.{index}.{field_name}"]
                for field_name in ("w_q", "w_k", "w_v", "w_o", "w_up", "w_down")
            }
        )
        for index in range(config.num_layers)
    ]
    return ModelWeights(
        config=config,
        embedding=arrays["embedding"],
        layers=layers,
        unembedding=arrays["unembedding"],
    )


def init_weights(config: ModelConfig) -> ModelWeights:
    """Generate deterministic weights for ``config``.

    Args:
        config: Validated model configuration.

    Returns:
        ModelWeights with every entry drawn at std weight_scale / sqrt(D).
    """
    std = config.weight_scale / np.sqrt(config.model_dim)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config):
        count = shape[0] * shape[1]
        normals = splitmix_normals(config.seed, name, count)
        arrays[name] = (normals * std).astype(np.float32).reshape(shape)
    logger.debug(
        "Initialized weights: layers=%d D=%d seed=%d",
        config.num_layers,
        config.model_dim,
        config.seed,
    )
    return _assemble(config, arrays)


def dump_weights(weights: ModelWeights, path: Path) -> None:
    """Write weights as a KVC1 file (little-endian float32 payload)."""
    config = weights.config
    header = struct.pack(
        HEADER_FORMAT,
        config.num_layers,
        config.num_heads,
        config.head_dim,
        config.ffn_dim,
        config.vocab_size,
        config.rope_base,
        config.weight_scale,
        config.seed,
        config.max_context,
    )
    path = Path(path)
    with path.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(header)
        for _, array in weights.named_parameters():
            handle.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_weights(path: Path) -> ModelWeights:
    """Read a KVC1 file written by :func:`dump_weights`.

    Raises:
        ConfigError: If the magic, header or payload size is wrong.
    """
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ConfigError(f"Not a KVC1 weight file: {path}")
    header_size = struct.calcsize(HEADER_FORMAT)
    fields = struct.unpack(HEADER_FORMAT, data[4 : 4 + header_size])
    config = ModelConfig(
        num_layers=fields[0],
        num_heads=fields[1],
        head_dim=fields[2],
        ffn_dim=fields[3],
        vocab_size=fields[4],
        rope_base=fields[5],
        weight_scale=fields[6],
        seed=fields[7],
        max_context=fields[8],
    )
    offset = 4 + header_size
    arrays: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config):
        count = shape[0] * shape[1]
        chunk = data[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise ConfigError(f"Truncated KVC1 file at parameter {name}: {path}")
        arrays[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float32)
        arrays[name] = arrays[name].reshape(shape)
        offset += 4 * count
    if offset != len(data):
        raise ConfigError(f"Trailing bytes in KVC1 file: {path}")
    return _assemble(config, arrays)
