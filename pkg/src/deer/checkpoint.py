"""Model checkpoints as a single JSON document.

Layout (format_version 1)::

    {
      "format_version": 1,
      "model_kind": "deer" | "ensemble" | "mcdp",
      "attributes": ["valence", ...],
      "config": {...},                  # echo of the resolved training config
      "members": [                      # one entry, or k for an ensemble
        {
          "head": "evidential" | "point",
          "n_attributes": 3,
          "dropout_rate": 0.3,
          "rng_seed": 0,
          "layers": [
            {"shape": [fan_in, fan_out], "weight": [... row-major ...], "bias": [...]},
            ...
          ]
        }
      ]
    }

Floats are written with Python's shortest round-trip repr, so loading a
checkpoint restores parameters bit for bit. Keys are sorted, so equal models
produce byte-identical files.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .net import Network

FORMAT_VERSION = 1
MODEL_KINDS = ("deer", "ensemble", "mcdp")


class CheckpointError(ValueError):
    pass


def _member_to_dict(net: Network) -> dict:
    layers = [
        {"shape": list(w.shape), "weight": w.reshape(-1).tolist(), "bias": b.tolist()}
        for w, b in zip(net.weights, net.biases)
    ]
    return {
        "head": net.kind,
        "n_attributes": net.n_attributes,
        "dropout_rate": net.dropout_rate,
        "rng_seed": net.rng_seed,
        "layers": layers,
    }


def _member_from_dict(d: dict) -> Network:
    weights, biases = [], []
    for layer in d["layers"]:
        shape = tuple(layer["shape"])
        weights.append(np.array(layer["weight"], dtype=np.float64).reshape(shape))
        biases.append(np.array(layer["bias"], dtype=np.float64))
    return Network(weights, biases, d["n_attributes"], d["head"], d["dropout_rate"], d["rng_seed"])


def dumps(model_kind: str, members: Sequence[Network], attributes: Sequence[str], config: dict) -> str:
    if model_kind not in MODEL_KINDS:
        raise CheckpointError(f"unknown model kind {model_kind!r}")
    doc = {
        "format_version": FORMAT_VERSION,
        "model_kind": model_kind,
        "attributes": list(attributes),
        "config": config,
        "members": [_member_to_dict(m) for m in members],
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def save_checkpoint(path, model_kind, members, attributes, config) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(model_kind, members, attributes, config))


def load_checkpoint(path):
    """Returns ``(model_kind, members, attributes, config)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc.msg})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    kind = doc.get("model_kind")
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    try:
        members = [_member_from_dict(m) for m in doc["members"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed member ({exc})") from None
    expected = "evidential" if kind == "deer" else "point"
    if not members or any(m.kind != expected for m in members):
        raise CheckpointError(f"{path}: {kind} checkpoint must hold {expected} networks")
    return kind, members, tuple(doc["attributes"]), doc.get("config", {})
