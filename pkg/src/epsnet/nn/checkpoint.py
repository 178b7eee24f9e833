"""JSON parameter checkpoints.

Arrays are stored as base64 of their little-endian bytes so a save/load round
trip is exact and the file is byte-reproducible.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1
_DTYPES = {"f32": "<f4", "f64": "<f8"}


class CheckpointError(ValueError):
    pass


def precision_of(dtype) -> str:
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return "f32"
    if dtype == np.float64:
        return "f64"
    raise CheckpointError(f"unsupported dtype {dtype}")


@dataclass
class Checkpoint:
    fingerprint: str
    precision: str
    arrays: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        code = _DTYPES[self.precision]
        params = {}
        for name, arr in self.arrays.items():
            raw = np.ascontiguousarray(arr, dtype=code).tobytes()
            params[name] = {"shape": list(arr.shape), "data": base64.b64encode(raw).decode("ascii")}
        return {
            "format": FORMAT_VERSION,
            "fingerprint": self.fingerprint,
            "precision": self.precision,
            "metadata": self.metadata,
            "parameters": params,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any], expected_fingerprint: str | None = None) -> "Checkpoint":
        if doc.get("format") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r}")
        fp = doc["fingerprint"]
        if expected_fingerprint is not None and fp != expected_fingerprint:
            raise CheckpointError(f"architecture fingerprint mismatch: {fp!r} != {expected_fingerprint!r}")
        precision = doc["precision"]
        if precision not in _DTYPES:
            raise CheckpointError(f"unknown precision {precision!r}")
        arrays = {}
        for name, entry in doc["parameters"].items():
            raw = base64.b64decode(entry["data"])
            arr = np.frombuffer(raw, dtype=_DTYPES[precision]).astype(precision_dtype(precision))
            shape = tuple(entry["shape"])
            if arr.size != int(np.prod(shape)):
                raise CheckpointError(f"parameter {name!r}: {arr.size} values for shape {shape}")
            arrays[name] = arr.reshape(shape)
        return cls(fp, precision, arrays, dict(doc.get("metadata", {})))

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | os.PathLike, expected_fingerprint: str | None = None) -> "Checkpoint":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), expected_fingerprint)


def precision_dtype(precision: str):
    return {"f32": np.float32, "f64": np.float64}[precision]


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
