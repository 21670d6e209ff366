"""Datasets: manifest I/O, synthetic generation, class hierarchies, batch sampling.

On-disk layout (paths relative to the manifest)::

    manifest.json   {name, n, b_in, m, c, feature_file, attribute_file,
                     label_file, seen, unseen, splits, hierarchy_file?, grid?}
    features.f32    n x [h x w x] b_in little-endian float32, row-major
    attributes.f32  m x c little-endian float32, row-major
    labels.i32      n little-endian int32
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, GenerationError, LabelError, MissingFileError, ShapeError

log = logging.getLogger(__name__)

F32 = np.dtype("<f4")
I32 = np.dtype("<i4")
SPLITS = ("train", "test_seen", "test_unseen")


@dataclass
class Hierarchy:
    macro_names: list[str]
    class_to_macro: dict[int, int]

    @property
    def n_macros(self) -> int:
        return len(self.macro_names)

    def macro_labels(self, labels) -> np.ndarray:
        return np.array([self.class_to_macro[int(l)] for l in np.asarray(labels).reshape(-1)], dtype=np.int64)

    def to_json(self) -> dict:
        groups: dict[str, list[int]] = {name: [] for name in self.macro_names}
        for c, q in sorted(self.class_to_macro.items()):
            groups[self.macro_names[q]].append(c)
        return groups


@dataclass
class Dataset:
    features: np.ndarray          # n x b_in or n x h x w x b_in, float64
    labels: np.ndarray            # n, int64
    attributes: np.ndarray        # m x c, float64
    seen: tuple[int, ...]
    unseen: tuple[int, ...]
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    name: str = "dataset"
    hierarchy: Hierarchy | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.seen = tuple(sorted(int(c) for c in self.seen))
        self.unseen = tuple(sorted(int(c) for c in self.unseen))
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}
        self.validate()

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def b_in(self) -> int:
        return self.features.shape[-1]

    @property
    def m(self) -> int:
        return self.attributes.shape[0]

    @property
    def c(self) -> int:
        return self.attributes.shape[1]

    @property
    def grid(self) -> tuple[int, int] | None:
        return tuple(self.features.shape[1:3]) if self.features.ndim == 4 else None

    def validate(self) -> None:
        if self.features.shape[0] != self.n:
            raise ShapeError(f"{self.features.shape[0]} feature rows but {self.n} labels")
        seen, unseen = set(self.seen), set(self.unseen)
        if seen & unseen:
            raise DataError(f"classes both seen and unseen: {sorted(seen & unseen)}")
        known = seen | unseen
        if any(c < 0 or c >= self.c for c in known):
            raise LabelError(f"class ids must lie in [0, {self.c}), attribute table has {self.c} columns")
        bad = sorted({int(l) for l in self.labels} - known)
        if bad:
            raise LabelError(f"labels outside the seen/unseen classes: {bad}")
        for name, idx in self.splits.items():
            if idx.size and (idx.min() < 0 or idx.max() >= self.n):
                raise ShapeError(f"split {name!r} indexes outside [0, {self.n})")
        if "train" in self.splits:
            stray = sorted({int(l) for l in self.labels[self.splits["train"]]} - seen)
            if stray:
                raise LabelError(f"train split holds unseen classes {stray}")
        if self.hierarchy is not None:
            missing = sorted(known - set(self.hierarchy.class_to_macro))
            if missing:
                raise ConfigurationError(f"hierarchy does not cover classes {missing}")


# -- hierarchy ---------------------------------------------------------------

def parse_hierarchy(obj: dict, classes) -> Hierarchy:
    """Validate a ``macro name -> [class ids]`` mapping against ``classes``."""
    if not isinstance(obj, dict):
        raise ConfigurationError("hierarchy must be a JSON object of macro name -> class ids")
    classes = {int(c) for c in classes}
    names = list(obj)
    assignment: dict[int, int] = {}
    for q, name in enumerate(names):
        for c in obj[name]:
            c = int(c)
            if c not in classes:
                raise ConfigurationError(f"hierarchy names unknown class {c} under {name!r}")
            if c in assignment:
                raise ConfigurationError(
                    f"class {c} assigned to both {names[assignment[c]]!r} and {name!r}")
            assignment[c] = q
    missing = sorted(classes - set(assignment))
    if missing:
        raise ConfigurationError(f"classes missing from hierarchy: {missing}")
    return Hierarchy(names, assignment)


def load_hierarchy(path, dataset: Dataset) -> Hierarchy:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"hierarchy file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return parse_hierarchy(obj, dataset.seen + dataset.unseen)


# -- manifest I/O --------------------------------------------------------------

def _read_raw(path: Path, dtype, what: str) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"{what} file not found: {path}")
    raw = path.read_bytes()
    if len(raw) % dtype.itemsize:
        raise ShapeError(f"{what} file {path.name} has {len(raw)} bytes, not a multiple of {dtype.itemsize}")
    return np.frombuffer(raw, dtype=dtype)


def load_dataset(manifest_path) -> Dataset:
    """Read a manifest (or a directory holding ``manifest.json``)."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        man = json.load(fh)
    root = path.parent
    required = ("n", "b_in", "m", "c", "feature_file", "attribute_file", "label_file", "seen", "unseen")
    absent = [k for k in required if k not in man]
    if absent:
        raise DataError(f"manifest {path} lacks fields {absent}")
    n, b_in, m, c = (int(man[k]) for k in ("n", "b_in", "m", "c"))
    grid = tuple(man.get("grid") or ())
    row = int(np.prod(grid)) * b_in if grid else b_in

    feats = _read_raw(root / man["feature_file"], F32, "feature")
    if feats.size % row:
        raise ShapeError(f"feature file holds {feats.size} values, not a multiple of row size {row}")
    rows = feats.size // row
    if rows != n:
        raise ShapeError(f"manifest declares n={n} but feature file holds {rows} rows")
    feats = feats.reshape((n,) + grid + (b_in,)).astype(np.float64)

    attrs = _read_raw(root / man["attribute_file"], F32, "attribute")
    if attrs.size != m * c:
        raise ShapeError(f"manifest declares m x c = {m} x {c} = {m * c} attributes "
                         f"but attribute file holds {attrs.size}")
    attrs = attrs.reshape(m, c).astype(np.float64)

    labels = _read_raw(root / man["label_file"], I32, "label")
    if labels.size != n:
        raise ShapeError(f"manifest declares n={n} but label file holds {labels.size} labels")
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"label {int(labels.max() if labels.max() >= c else labels.min())} "
                         f"out of range [0, {c})")

    splits = {k: np.asarray(v, dtype=np.int64) for k, v in (man.get("splits") or {}).items()}
    ds = Dataset(feats, labels, attrs, man["seen"], man["unseen"], splits, man.get("name", path.stem))
    if man.get("hierarchy_file"):
        ds.hierarchy = load_hierarchy(root / man["hierarchy_file"], ds)
    return ds


def save_dataset(ds: Dataset, directory) -> Path:
    """Write manifest and sidecar files; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ds.features.astype(F32).tofile(out / "features.f32")
    ds.attributes.astype(F32).tofile(out / "attributes.f32")
    ds.labels.astype(I32).tofile(out / "labels.i32")
    man = {
        "name": ds.name, "n": ds.n, "b_in": ds.b_in, "m": ds.m, "c": ds.c,
        "feature_file": "features.f32", "attribute_file": "attributes.f32", "label_file": "labels.i32",
        "seen": list(ds.seen), "unseen": list(ds.unseen),
        "splits": {k: [int(i) for i in v] for k, v in ds.splits.items()},
    }
    if ds.grid:
        man["grid"] = list(ds.grid)
    if ds.hierarchy is not None:
        with open(out / "hierarchy.json", "w", encoding="utf-8") as fh:
            json.dump(ds.hierarchy.to_json(), fh, indent=1)
        man["hierarchy_file"] = "hierarchy.json"
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=1)
    return path


# -- synthetic data ------------------------------------------------------------

def generate_synthetic(c_seen: int, c_unseen: int, m: int, b_in: int, n_per_class: int,
                       noise_std: float = 0.1, seed: int = 0, *, train_fraction: float = 0.8,
                       n_macros: int | None = None) -> Dataset:
    """Linear ground truth: sample of class c is ``W a_c + noise``.

    Attribute columns are Bernoulli(0.5) binary vectors, redrawn until all
    columns are distinct and non-zero. Seen classes take ids ``0..c_seen-1``;
    unseen classes appear only in ``test_unseen``. With ``n_macros`` classes
    are assigned round-robin to that many macroclasses.
    """
    if min(c_seen, c_unseen, m, b_in, n_per_class) < 1 or noise_std < 0:
        raise GenerationError("counts must be positive and noise_std non-negative")
    rng = np.random.default_rng(seed)
    c = c_seen + c_unseen
    for _ in range(1000):
        attrs = (rng.random((m, c)) < 0.5).astype(np.float64)
        cols = {tuple(col) for col in attrs.T}
        if len(cols) == c and attrs.sum(axis=0).min() > 0:
            break
    else:
        raise GenerationError(f"could not draw {c} distinct attribute columns in M={m}; raise M")
    w = rng.normal(0.0, 1.0 / np.sqrt(m), size=(b_in, m))
    labels = np.repeat(np.arange(c), n_per_class)
    feats = attrs[:, labels].T @ w.T
    if noise_std > 0:
        feats = feats + rng.normal(0.0, noise_std, size=feats.shape)
    n_train = max(1, min(n_per_class - 1, int(round(train_fraction * n_per_class)))) if n_per_class > 1 else 1
    train, test_seen, test_unseen = [], [], []
    for cls in range(c):
        idx = np.flatnonzero(labels == cls)
        if cls < c_seen:
            perm = rng.permutation(idx)
            train.extend(sorted(perm[:n_train]))
            test_seen.extend(sorted(perm[n_train:]))
        else:
            test_unseen.extend(idx)
    hierarchy = None
    if n_macros:
        hierarchy = Hierarchy([f"macro{q}" for q in range(n_macros)], {k: k % n_macros for k in range(c)})
    return Dataset(feats, labels, attrs, range(c_seen), range(c_seen, c),
                   {"train": train, "test_seen": test_seen, "test_unseen": test_unseen},
                   name=f"synthetic-{seed}", hierarchy=hierarchy)


# -- batches -------------------------------------------------------------------

@dataclass(frozen=True)
class BatchSpec:
    n_pos: int = 12
    n_neg: int = 12

    def __post_init__(self):
        if self.n_pos < 1 or self.n_neg < 0:
            raise ConfigurationError(f"batch needs n_pos >= 1 and n_neg >= 0, got {self.n_pos}:{self.n_neg}")

    @property
    def size(self) -> int:
        return self.n_pos + self.n_neg


@dataclass
class Batch:
    indices: np.ndarray
    labels: np.ndarray
    macro_labels: np.ndarray | None
    anchor_class: int


_warned_small: set[tuple[str, int]] = set()


def sample_batch(ds: Dataset, spec: BatchSpec, rng: np.random.Generator) -> Batch:
    """Anchor class drawn uniformly; ``n_pos`` samples of it, ``n_neg`` from other seen classes."""
    train = ds.splits.get("train")
    if train is None or train.size == 0:
        raise DataError("dataset has no training samples")
    if spec.size > train.size:
        raise ConfigurationError(f"batch of {spec.size} exceeds the {train.size} training samples")
    train_labels = ds.labels[train]
    classes = np.array([c for c in ds.seen if np.any(train_labels == c)])
    anchor = int(classes[rng.integers(len(classes))])
    pool = train[train_labels == anchor]
    replace = pool.size < spec.n_pos
    if replace and (ds.name, anchor) not in _warned_small:
        _warned_small.add((ds.name, anchor))
        log.warning("class %d has %d training samples (< %d); sampling with replacement",
                    anchor, pool.size, spec.n_pos)
    pos = rng.choice(pool, size=spec.n_pos, replace=replace)
    others = train[train_labels != anchor]
    neg = np.empty(0, dtype=np.int64)
    if spec.n_neg:
        if others.size == 0:
            raise DataError("negatives requested but only one seen class has training samples")
        neg = rng.choice(others, size=spec.n_neg, replace=others.size < spec.n_neg)
    idx = np.concatenate([pos, neg]).astype(np.int64)
    labels = ds.labels[idx]
    macros = ds.hierarchy.macro_labels(labels) if ds.hierarchy is not None else None
    return Batch(idx, labels, macros, anchor)
