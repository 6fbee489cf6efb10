"""JSON checkpoints.

Layout::

    {
      "format-version": 1,
      "kind": "cmdrnn" | "vae",
      "config": {...},
      "params": {"<block>": {"<name>": {"shape": [...], "values": [...]}}},
      "scaler": {"minimum": [...], "span": [...]} | null,
      "seed": int,
      ...extra keys
    }

Floats are written with ``repr`` precision, so loading reproduces every
parameter bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_state(state: dict[str, np.ndarray]) -> dict:
    return {name: {"shape": list(a.shape), "values": a.reshape(-1).tolist()} for name, a in state.items()}


def decode_state(blob: dict) -> dict[str, np.ndarray]:
    return {name: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"]) for name, v in blob.items()}


def save(path, kind: str, config: dict, blocks: dict[str, dict[str, np.ndarray]], scaler=None, seed: int = 0, **extra):
    doc = {
        "format-version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "params": {block: encode_state(state) for block, state in blocks.items()},
        "scaler": None if scaler is None else scaler.to_dict(),
        "seed": seed,
        **extra,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load(path, kind: str | None = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from None
    if doc.get("format-version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format-version {doc.get('format-version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {doc.get('kind')!r}")
    doc["params"] = {block: decode_state(state) for block, state in doc["params"].items()}
    return doc
