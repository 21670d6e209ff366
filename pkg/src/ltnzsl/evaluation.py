"""Zero-shot inference, calibrated stacking and per-class accuracy metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import Dataset
from .errors import ConfigurationError, DimensionError, ParameterError

log = logging.getLogger(__name__)


def _features(ckpt_or_tensors, inputs) -> np.ndarray:
    """Pooled (and optionally hidden-layer) features with plain numpy."""
    t = ckpt_or_tensors.tensors if isinstance(ckpt_or_tensors, Checkpoint) else ckpt_or_tensors
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 4:
        x = x.mean(axis=(1, 2))
    if "hidden_w" in t:
        x = np.tanh(x @ t["hidden_w"] + t["hidden_b"])
    return x


def scores(x, V, attrs) -> np.ndarray:
    """Raw bilinear scores ``x^T V a_c``; ``n x C`` (or length ``C`` for one sample)."""
    x, V, attrs = np.asarray(x, float), np.asarray(V, float), np.asarray(attrs, float)
    if x.shape[-1] != V.shape[0] or V.shape[1] != attrs.shape[0]:
        raise DimensionError(f"score shape mismatch: x {x.shape}, V {V.shape}, attrs {attrs.shape}")
    return x @ V @ attrs


def predict_zsl(x, V, attrs_unseen, unseen_ids=None):
    """Argmax of raw scores over unseen classes; ties go to the lowest id.

    Returns column positions, or class ids when ``unseen_ids`` is given.
    """
    attrs_unseen = np.asarray(attrs_unseen, float)
    if attrs_unseen.ndim != 2 or attrs_unseen.shape[1] < 1:
        raise ConfigurationError("zero-shot prediction needs at least one unseen class")
    s = scores(x, V, attrs_unseen)
    return _argmax(s, unseen_ids)


def predict_gzsl(x, V, attrs_all, seen_mask, gamma: float, class_ids=None):
    """Argmax over all classes of the score minus ``gamma`` on seen columns."""
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    s = scores(x, V, attrs_all) - gamma * np.asarray(seen_mask, dtype=float)
    return _argmax(s, class_ids)


def _argmax(s: np.ndarray, ids):
    # np.argmax returns the first maximum, which is the lowest column
    if ids is None:
        return np.argmax(s, axis=-1)
    ids = np.asarray(ids)
    order = np.argsort(ids, kind="stable")
    pos = np.argmax(s[..., order], axis=-1)
    return ids[order][pos]


def per_class_accuracy(predictions, labels, classes) -> dict[int, float]:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DimensionError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    out = {}
    for c in classes:
        sel = labels == c
        if not sel.any():
            log.warning("class %d has no test samples; excluded from its mean", c)
            continue
        out[int(c)] = float(np.mean(predictions[sel] == c))
    return out


def harmonic(u: float, s: float) -> float:
    return 0.0 if u + s == 0 else 2 * u * s / (u + s)


@dataclass
class EvalReport:
    T1: float
    U: float
    S: float
    H: float
    gamma: float
    per_class: dict[str, float] = field(default_factory=dict)
    sweep: list[dict] | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def table(self) -> str:
        return f"gamma={self.gamma:g}  T1={self.T1:.4f}  U={self.U:.4f}  S={self.S:.4f}  H={self.H:.4f}"


def _mean(d: dict) -> float:
    return float(np.mean(list(d.values()))) if d else 0.0


def compute_metrics(predictions, labels, seen, unseen, *, zsl_predictions=None, zsl_labels=None,
                    gamma: float = 0.0) -> EvalReport:
    """U and S from generalized predictions; T1 from unseen-only predictions.

    Without ``zsl_predictions`` T1 is reported as 0.
    """
    seen_acc = per_class_accuracy(predictions, labels, seen)
    unseen_acc = per_class_accuracy(predictions, labels, unseen)
    t1 = 0.0
    zsl_acc = {}
    if zsl_predictions is not None:
        zsl_acc = per_class_accuracy(zsl_predictions, labels if zsl_labels is None else zsl_labels, unseen)
        t1 = _mean(zsl_acc)
    u, s = _mean(unseen_acc), _mean(seen_acc)
    per = {f"gzsl/{c}": a for c, a in sorted({**seen_acc, **unseen_acc}.items())}
    per.update({f"zsl/{c}": a for c, a in sorted(zsl_acc.items())})
    return EvalReport(T1=t1, U=u, S=s, H=harmonic(u, s), gamma=float(gamma), per_class=per)


def _test_split(dataset: Dataset):
    seen_idx = dataset.splits.get("test_seen", np.empty(0, dtype=np.int64))
    unseen_idx = dataset.splits.get("test_unseen", np.empty(0, dtype=np.int64))
    return seen_idx, unseen_idx


def evaluate(ckpt: Checkpoint, dataset: Dataset, gamma: float = 0.0) -> EvalReport:
    """T1 on unseen test samples; U, S, H with calibrated stacking at ``gamma``."""
    V = ckpt["V"]
    seen_idx, unseen_idx = _test_split(dataset)
    if unseen_idx.size == 0:
        raise ConfigurationError("dataset has no unseen test samples")
    unseen = np.asarray(dataset.unseen)
    all_ids = np.arange(dataset.c)
    seen_mask = np.isin(all_ids, dataset.seen)
    x_u = _features(ckpt, dataset.features[unseen_idx])
    zsl = predict_zsl(x_u, V, dataset.attributes[:, unseen], unseen)
    idx = np.concatenate([seen_idx, unseen_idx])
    x = _features(ckpt, dataset.features[idx])
    gz = predict_gzsl(x, V, dataset.attributes, seen_mask, gamma, all_ids)
    return compute_metrics(gz, dataset.labels[idx], dataset.seen, unseen,
                           zsl_predictions=zsl, zsl_labels=dataset.labels[unseen_idx], gamma=gamma)


@dataclass
class SweepRow:
    gamma: float
    U: float
    S: float
    H: float
    best: bool = False


def gamma_sweep(ckpt: Checkpoint, dataset: Dataset, gammas: Sequence[float]) -> list[SweepRow]:
    """One row per gamma; the row with the highest H (first on ties) is flagged."""
    if len(gammas) == 0:
        raise ConfigurationError("gamma sweep needs at least one value")
    rows = []
    for g in gammas:
        r = evaluate(ckpt, dataset, g)
        rows.append(SweepRow(float(g), r.U, r.S, r.H))
    best = max(range(len(rows)), key=lambda i: (rows[i].H, -i))
    rows[best].best = True
    return rows
