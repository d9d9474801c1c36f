"""Checkpoint files: a versioned JSON document of named, shaped float64 arrays.

Layout::

    {
      "format": "ppm-uncertainty-checkpoint",
      "version": 1,
      "meta": {...},                      # free-form JSON (model config, scalers)
      "tensors": {"<name>": {"shape": [..], "values": [..]}, ...}
    }

Values are written with Python's shortest round-trip float repr, so a
save/load cycle is exact and identical parameters give identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

FORMAT = "ppm-uncertainty-checkpoint"
VERSION = 1


def dumps_checkpoint(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "meta": dict(meta or {}),
        "tensors": {
            name: {"shape": list(np.shape(arr)), "values": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in sorted(tensors.items())
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_checkpoint(text: str) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise DataError(f"not a checkpoint file (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')!r}")
    tensors = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["tensors"].items()
    }
    return tensors, doc.get("meta", {})


def save_checkpoint(path, tensors, meta=None) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps_checkpoint(tensors, meta))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads_checkpoint(Path(path).read_text())
