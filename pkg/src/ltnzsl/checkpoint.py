"""Checkpoints: a JSON index plus one little-endian float32 blob.

Tensors are rounded to float32 when the checkpoint is created, so an
in-memory checkpoint and its reloaded copy evaluate identically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, MissingFileError
from .fuzzy import FuzzyConfig

INDEX = "checkpoint.json"
BLOB = "tensors.f32"
F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]          # float32-exact values held as float64
    fuzzy: FuzzyConfig = field(default_factory=FuzzyConfig)
    config: dict = field(default_factory=dict)
    epoch: int = 0

    @classmethod
    def capture(cls, tensors: dict[str, np.ndarray], fuzzy: FuzzyConfig, config: dict, epoch: int) -> "Checkpoint":
        rounded = {k: np.asarray(v, dtype=np.float64).astype(F32).astype(np.float64) for k, v in tensors.items()}
        return cls(rounded, FuzzyConfig(**fuzzy.to_dict()), dict(config), epoch)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def get(self, name: str, default=None):
        return self.tensors.get(name, default)


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    for name in sorted(ckpt.tensors):
        arr = ckpt.tensors[name].astype(F32)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr.reshape(-1))
    blob = np.concatenate(chunks) if chunks else np.empty(0, dtype=F32)
    blob.astype(F32).tofile(out / BLOB)
    index = {"format": "ltnzsl-checkpoint-1", "blob": BLOB, "dtype": "float32-le", "tensors": entries,
             "fuzzy": ckpt.fuzzy.to_dict(), "config": ckpt.config, "epoch": ckpt.epoch}
    with open(out / INDEX, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return out


def load_checkpoint(directory) -> Checkpoint:
    root = Path(directory)
    path = root / INDEX
    if not path.exists():
        raise MissingFileError(f"checkpoint index not found: {path}")
    with open(path, encoding="utf-8") as fh:
        index = json.load(fh)
    blob_path = root / index["blob"]
    if not blob_path.exists():
        raise MissingFileError(f"checkpoint blob not found: {blob_path}")
    blob = np.frombuffer(blob_path.read_bytes(), dtype=F32)
    tensors = {}
    for e in index["tensors"]:
        lo, hi = e["offset"], e["offset"] + e["count"]
        if hi > blob.size:
            raise DataError(f"checkpoint blob too short for tensor {e['name']!r}")
        tensors[e["name"]] = blob[lo:hi].reshape(e["shape"]).astype(np.float64)
    return Checkpoint(tensors, FuzzyConfig(**index["fuzzy"]), index.get("config", {}), index.get("epoch", 0))
