"""JSON pool dumps with optional tensor sidecars."""

import json
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np

from kvcomm import __version__
from kvcomm.anchors.models import Anchor, AnchorPool

logger = logging.getLogger(__name__)


def _coverage(anchor: Anchor) -> list[dict]:
    keys = sorted(set(anchor.placeholder_offsets) | set(anchor.prefix_offsets))
    return [
        {
            "agent": agent,
            "slot": slot,
            "placeholder": (agent, slot) in anchor.placeholder_offsets,
            "prefix": (agent, slot) in anchor.prefix_offsets,
        }
        for agent, slot in keys
    ]


def summarize_pool(pool: AnchorPool) -> dict:
    """JSON-serializable description of a pool, without tensors."""
    return {
        "name": pool.name,
        "capacity": pool.capacity,
        "size": len(pool),
        "nbytes": pool.nbytes(),
        "anchors": [
            {
                "id": a.anchor_id,
                "length": a.length,
                "access_count": a.access_count,
                "insertion_index": a.insertion_index,
                "nbytes": a.nbytes(),
                "offsets": _coverage(a),
            }
            for a in pool.anchors
        ],
    }


def _sidecar_name(anchor_id: str) -> str:
    return anchor_id.replace("#", "_") + ".npz"


def _write_sidecar(anchor: Anchor, path: Path) -> None:
    arrays: dict[str, np.ndarray] = {
        "tokens": np.asarray(anchor.tokens, dtype=np.int64),
        "embeddings": anchor.embeddings,
        "base_keys": anchor.base.keys,
        "base_values": anchor.base.values,
    }
    for (agent, slot), offset in anchor.placeholder_offsets.items():
        arrays[f"placeholder_{agent}_{slot}_keys"] = offset.delta_keys
        arrays[f"placeholder_{agent}_{slot}_values"] = offset.delta_values
    for (agent, slot), offset in anchor.prefix_offsets.items():
        arrays[f"prefix_{agent}_{slot}_keys"] = offset.delta_keys
        arrays[f"prefix_{agent}_{slot}_values"] = offset.delta_values
    np.savez(path, **arrays)


def dump_pools(
    pools: dict[str, AnchorPool],
    out_dir: Path,
    dump_tensors: bool = False,
    config: Optional[dict[str, Any]] = None,
) -> Path:
    """Write ``pools.json`` (and ``.npz`` sidecars) under ``out_dir``.

    Args:
        pools: Anchor pools by placeholder name.
        out_dir: Output directory.
        dump_tensors: Also write one ``.npz`` per anchor.
        config: Resolved config echoed next to the pools.

    Returns:
        Path of the JSON summary.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "version": __version__,
        "config": config or {},
        "pools": [summarize_pool(pools[name]) for name in sorted(pools)],
    }
    if dump_tensors:
        tensor_dir = out_dir / "anchors"
        tensor_dir.mkdir(exist_ok=True)
        for name in sorted(pools):
            for anchor in pools[name].anchors:
                _write_sidecar(anchor, tensor_dir / _sidecar_name(anchor.anchor_id))
    path = out_dir / "pools.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    logger.info("Wrote pool dump for %d pools to %s", len(pools), path)
    return path
