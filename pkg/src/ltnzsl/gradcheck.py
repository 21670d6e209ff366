"""Finite-difference checks for every differentiable primitive and the full loss."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import fuzzy as fz
from .autodiff import Tensor, grad_check
from .data import Batch, generate_synthetic
from .fuzzy import FuzzyConfig


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    # random projection to a scalar so every output entry is exercised
    return ad.tsum(out * w)


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    row = _leaf(rng, (4,))
    pos = _leaf(rng, (3, 4), 0.2, 2.0)
    t1, t2 = _leaf(rng, (5,), 0.05, 0.95), _leaf(rng, (5,), 0.05, 0.95)
    m1, m2 = _leaf(rng, (3, 5)), _leaf(rng, (5, 2))
    grid = _leaf(rng, (2, 3, 2, 4))
    w34, w3, w5 = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=5)
    w32, w24 = rng.normal(size=(3, 2)), rng.normal(size=(2, 4))
    return {
        "add": (lambda: _weighted(a + row, w34), [a, row]),
        "sub": (lambda: _weighted(a - b, w34), [a, b]),
        "mul": (lambda: _weighted(a * b, w34), [a, b]),
        "div": (lambda: _weighted(a / pos, w34), [a, pos]),
        "neg": (lambda: _weighted(-a, w34), [a]),
        "power": (lambda: _weighted(ad.power(pos, 2.5), w34), [pos]),
        "pow_clamped": (lambda: _weighted(ad.pow_clamped(pos, 3.0), w34), [pos]),
        "root_p": (lambda: _weighted(ad.root_p(pos, 4.0), w34), [pos]),
        "exp": (lambda: _weighted(ad.exp(a), w34), [a]),
        "log": (lambda: _weighted(ad.log(pos), w34), [pos]),
        "tanh": (lambda: _weighted(ad.tanh(a), w34), [a]),
        "sigmoid": (lambda: _weighted(ad.sigmoid(3.0 * a), w34), [a]),
        "sum": (lambda: _weighted(ad.tsum(a * a, axis=1), w3), [a]),
        "mean": (lambda: ad.tmean(ad.exp(a)), [a]),
        "matmul": (lambda: _weighted(ad.matmul(m1, m2), w32), [m1, m2]),
        "softmax": (lambda: _weighted(ad.softmax_rows(a), w34), [a]),
        "cosine": (lambda: ad.tsum(ad.cosine_similarity(a, b) * w3), [a, b]),
        "mean_pool": (lambda: _weighted(ad.mean_pool(grid), w24), [grid]),
        "index": (lambda: ad.tsum(a[np.array([0, 2, 2]), np.array([1, 3, 3])] * w3), [a]),
        "fuzzy_not": (lambda: _weighted(fz.fuzzy_not(t1), w5), [t1]),
        "fuzzy_and": (lambda: _weighted(fz.fuzzy_and(t1, t2), w5), [t1, t2]),
        "fuzzy_or": (lambda: _weighted(fz.fuzzy_or(t1, t2), w5), [t1, t2]),
        "fuzzy_implies": (lambda: _weighted(fz.fuzzy_implies(t1, t2), w5), [t1, t2]),
        "agg_exists": (lambda: fz.agg_exists(t1, 4.0), [t1]),
        "agg_forall": (lambda: fz.agg_forall(t1, 6.0), [t1]),
    }


def kb_loss_case(seed: int = 0, p: float = 2.0):
    """Loss closure over a 4-sample batch (two classes, two macros), all six axioms."""
    from .trainer import ModelParams, TrainConfig, build_kb, kb_loss, init_model

    ds = generate_synthetic(2, 1, 6, 5, 4, noise_std=0.1, seed=seed, n_macros=2)
    cfg = TrainConfig(alpha=2.0, k_mask=2, n_pos=2, n_neg=2, seed=seed)
    params: ModelParams = init_model(ds, cfg)
    params.macro.data = np.random.default_rng(seed).normal(0, 0.5, size=params.macro.shape)
    train = ds.splits["train"]
    idx = np.concatenate([train[ds.labels[train] == 0][:2], train[ds.labels[train] == 1][:2]])
    labels = ds.labels[idx]
    batch = Batch(idx, labels, ds.hierarchy.macro_labels(labels), int(labels[0]))
    from .fol import builtin_axioms
    axioms = builtin_axioms()
    fuzzy = FuzzyConfig(p_forall=p, p_exists=p)

    def f() -> Tensor:
        kb = build_kb(batch, axioms, params, cfg, np.random.default_rng(seed), ds, fuzzy)
        return kb_loss(kb)

    return f, list(params.named().values())


def run_suite(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Max relative error per case."""
    rng = np.random.default_rng(seed)
    out = {name: grad_check(f, ps, eps) for name, (f, ps) in primitive_cases(rng).items()}
    f, ps = kb_loss_case(seed)
    out["kb_loss"] = grad_check(f, ps, eps)
    return out
