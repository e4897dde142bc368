"""Checkpoint files: one JSON document holding actor, critic and run metadata.

Layout::

    {
      "format": "mopn-checkpoint",
      "version": 1,
      "kind": "T1O2",
      "l": 128,
      "d_problem": 6,
      "critic_hidden": [128, 20, 20],
      "critic_reduction": "sum",
      "meta": {"scale": 40, "strategy": "TS-RM", "epoch": 5, "seed": 0, ...},
      "actor":  {"enc.W": {"shape": [6, 128], "values": [...]}, ...},
      "critic": {"crit.W1": {...}, ...}
    }

``values`` are the row-major entries written with Python's shortest
round-trip float repr, so loading reproduces every bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .actor import ActorModel
from .errors import CheckpointError
from .instances import ProblemKind
from .ndcore import ParamStore

CHECKPOINT_FORMAT = "mopn-checkpoint"
CHECKPOINT_VERSION = 1


def _dump_store(store: ParamStore) -> dict:
    return {name: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
            for name, v in store.params.items()}


def _load_store(doc: dict) -> ParamStore:
    store = ParamStore()
    for name, entry in doc.items():
        values = np.array(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: {values.size} values for shape {shape}")
        store.add(name, values.reshape(shape))
    return store


def checkpoint_to_dict(actor: ActorModel, critic, meta: dict) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": actor.kind.tag if actor.kind is not None else None,
        "l": actor.l,
        "d_problem": actor.d_problem,
        "critic_hidden": list(critic.hidden) if critic is not None else None,
        "critic_reduction": critic.reduction if critic is not None else None,
        "meta": dict(meta),
        "actor": _dump_store(actor.store),
        "critic": _dump_store(critic.store) if critic is not None else None,
    }


def save_checkpoint(path, actor: ActorModel, critic=None, meta: dict | None = None) -> None:
    doc = checkpoint_to_dict(actor, critic, meta or {})
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path):
    """Return ``(actor, critic, meta)``; ``critic`` is None if the file has none."""
    from .trainer import CriticModel

    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        kind = ProblemKind.parse(doc["kind"]) if doc.get("kind") else None
        actor = ActorModel(doc["d_problem"], doc["l"], _load_store(doc["actor"]), kind=kind)
        critic = None
        if doc.get("critic") is not None:
            critic = CriticModel(doc["d_problem"], tuple(doc["critic_hidden"]), _load_store(doc["critic"]),
                                  reduction=doc.get("critic_reduction") or "sum")
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return actor, critic, doc.get("meta", {})
