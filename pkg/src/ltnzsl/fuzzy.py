"""Real-valued connectives, generalized-mean quantifiers and the p schedule.

Connectives follow the symmetric product configuration: standard negation,
Reichenbach implication, product conjunction and probabilistic sum.
Quantifiers use the generalized mean (exists) and the generalized mean of
the error (forall).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DomainError, ParameterError

TRUTH_TOL = 1e-9


def _check_truth(t: Tensor, what: str) -> None:
    d = t.data
    if d.size and (np.nanmin(d) < -TRUTH_TOL or np.nanmax(d) > 1.0 + TRUTH_TOL or np.isnan(d).any()):
        raise DomainError(f"{what}: truth values must lie in [0, 1], got range "
                          f"[{np.nanmin(d):.6g}, {np.nanmax(d):.6g}]")


def fuzzy_not(a) -> Tensor:
    a = ad.as_tensor(a)
    _check_truth(a, "not")
    return 1.0 - a


def fuzzy_implies(a, b) -> Tensor:
    """Reichenbach implication ``1 - a + a*b``."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _check_truth(a, "implies")
    _check_truth(b, "implies")
    return 1.0 - a + a * b


def fuzzy_and(a, b) -> Tensor:
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _check_truth(a, "and")
    _check_truth(b, "and")
    return a * b


def fuzzy_or(a, b) -> Tensor:
    # written as the De Morgan dual of the product so the identity is exact
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _check_truth(a, "or")
    _check_truth(b, "or")
    return 1.0 - (1.0 - a) * (1.0 - b)


def _check_p(p: float) -> float:
    p = float(p)
    if not p >= 1.0:
        raise ParameterError(f"aggregator exponent must be >= 1, got {p}")
    return p


def agg_exists(values, p: float, *, axis: int = -1, mask=None, grad_floor: float = ad.POW_EPS) -> Tensor:
    """Generalized mean ``((1/n) sum a_i^p)^(1/p)`` along ``axis``.

    With a boolean ``mask`` only the selected entries take part; a slice
    with nothing selected yields 0 (callers decide what an empty
    existential means).
    """
    p = _check_p(p)
    values = ad.as_tensor(values)
    _check_truth(values, "exists")
    if values.ndim == 0:
        raise ParameterError("aggregators need at least one axis")
    if mask is None:
        n = values.shape[axis]
        if n == 0:
            raise ParameterError("cannot aggregate an empty set of truth values")
        mean = ad.tmean(ad.power(values, p), axis=axis)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
        count = np.maximum(m.sum(axis=axis), 1).astype(float)
        powered = ad.where(m, ad.power(values, p), 0.0)
        mean = ad.tsum(powered, axis=axis) / count
    return ad.root_p(mean, p, grad_floor)


def agg_forall(values, p: float, *, axis: int = -1, mask=None, grad_floor: float = ad.POW_EPS) -> Tensor:
    """Generalized mean w.r.t. the error: ``1 - ((1/n) sum (1-a_i)^p)^(1/p)``.

    An empty masked slice yields 1 (vacuous truth).
    """
    values = ad.as_tensor(values)
    _check_truth(values, "forall")
    return 1.0 - agg_exists(1.0 - values, p, axis=axis, mask=mask, grad_floor=grad_floor)


def sat_aggregate(axiom_truths, p: float) -> Tensor:
    """Aggregated satisfiability of a knowledge base (forall over its axioms)."""
    if isinstance(axiom_truths, (list, tuple)):
        if not axiom_truths:
            raise ConfigurationError("knowledge base has no axioms")
        axiom_truths = ad.stack(axiom_truths)
    axiom_truths = ad.as_tensor(axiom_truths)
    if axiom_truths.size == 0:
        raise ConfigurationError("knowledge base has no axioms")
    return agg_forall(axiom_truths.reshape(-1), p)


@dataclass
class FuzzyConfig:
    p_forall: float = 2.0
    p_exists: float = 2.0
    clamp_eps: float = ad.POW_EPS

    def __post_init__(self):
        if not (self.p_forall >= 1 and self.p_exists >= 1):
            raise ParameterError(f"p_forall and p_exists must be >= 1, got {self.p_forall}, {self.p_exists}")
        if not 0 < self.clamp_eps < 0.5:
            raise ParameterError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")

    def with_p(self, p: float) -> "FuzzyConfig":
        return FuzzyConfig(p_forall=p, p_exists=p, clamp_eps=self.clamp_eps)

    def to_dict(self) -> dict:
        return {"p_forall": self.p_forall, "p_exists": self.p_exists, "clamp_eps": self.clamp_eps}


@dataclass
class PSchedule:
    """Piecewise-constant exponent schedule.

    ``every_k``: ``initial_p + step * (epoch // k)``.
    ``at_epochs``: ``initial_p + step * #{milestones <= epoch}``.
    Both are capped at ``cap``.
    """

    initial_p: float = 2.0
    mode: str = "every_k"
    step: float = 2.0
    k: int = 4
    epochs: Sequence[int] = field(default_factory=list)
    cap: float = 6.0

    def __post_init__(self):
        if self.mode not in ("every_k", "at_epochs"):
            raise ParameterError(f"unknown schedule mode {self.mode!r}")
        if self.initial_p < 1 or self.step < 0 or self.cap < self.initial_p:
            raise ParameterError("schedule needs initial_p >= 1, step >= 0 and cap >= initial_p")
        if self.mode == "every_k" and self.k < 1:
            raise ParameterError(f"every_k schedule needs k >= 1, got {self.k}")
        self.epochs = sorted(int(e) for e in self.epochs)

    @classmethod
    def every_k_epochs(cls, initial_p=2.0, step=2.0, k=4, cap=6.0) -> "PSchedule":
        return cls(initial_p=initial_p, mode="every_k", step=step, k=k, cap=cap)

    @classmethod
    def at(cls, epochs, initial_p=2.0, step=1.0, cap=6.0) -> "PSchedule":
        return cls(initial_p=initial_p, mode="at_epochs", step=step, epochs=list(epochs), cap=cap)

    def to_dict(self) -> dict:
        return {"initial_p": self.initial_p, "mode": self.mode, "step": self.step,
                "k": self.k, "epochs": list(self.epochs), "cap": self.cap}

    @classmethod
    def from_dict(cls, d: dict) -> "PSchedule":
        return cls(**d)


def schedule_p(epoch: int, schedule: PSchedule) -> float:
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    if schedule.mode == "every_k":
        increments = epoch // schedule.k
    else:
        increments = sum(1 for e in schedule.epochs if e <= epoch)
    return float(min(schedule.initial_p + schedule.step * increments, schedule.cap))
