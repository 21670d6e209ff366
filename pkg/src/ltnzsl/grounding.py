"""Groundings of the predicates and a tensor evaluator for quantified formulas.

A formula is evaluated over the Cartesian grid of the axes opened by its
enclosing quantifiers. A ``diag(...)`` binding opens a single axis shared
by all of its variables, so ``n`` paired instances give ``n`` terms, never
``n**2``. Guards filter the index set of the quantifier they belong to.
Two nested quantifiers over the same domain range over distinct elements
(for example, ordered pairs ``i != j`` of batch samples).

Empty index sets follow vacuous-truth rules: a universal over nothing is
1.0; an existential over nothing is dropped from the enclosing aggregate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, LabelError, ParameterError
from .fol import (ATTRIBUTE_VECTOR, CLASS_LABEL, IMAGE, LABEL_SORTS, MACRO_LABEL,
                  SEEN_CLASS_LABEL, And, Formula, Implies, Not, Or, Pred, Quant,
                  Signature, flvn_signature, infer_sorts)
from .fuzzy import (FuzzyConfig, agg_exists, agg_forall, fuzzy_and, fuzzy_implies,
                    fuzzy_not, fuzzy_or)

BATCH, CLASSES, SEEN, MACROS = "batch", "classes", "seen", "macros"

# where an otherwise unbound variable of a given sort is looked up
DEFAULT_DOMAIN = {
    IMAGE: BATCH,
    ATTRIBUTE_VECTOR: CLASSES,
    CLASS_LABEL: CLASSES,
    SEEN_CLASS_LABEL: SEEN,
    MACRO_LABEL: MACROS,
}


# -- predicate groundings on explicit tensors --------------------------------

def class_scores(x, V, attrs) -> Tensor:
    """Softmax over classes of the bilinear score ``x^T V a_c``; ``n x C``."""
    x, V, attrs = ad.as_tensor(x), ad.as_tensor(V), ad.as_tensor(attrs)
    if attrs.ndim != 2 or attrs.shape[1] < 1:
        raise DimensionError(f"attribute table must be M x C with C >= 1, got {attrs.shape}")
    return ad.softmax_rows(ad.matmul(ad.matmul(x, V), attrs))


def _pick(scores: Tensor, cols: np.ndarray) -> Tensor:
    return scores[np.arange(len(cols)), cols]


def label_columns(labels, class_ids) -> np.ndarray:
    """Map class ids to column positions of an attribute table over ``class_ids``."""
    lookup = {int(c): i for i, c in enumerate(class_ids)}
    try:
        return np.array([lookup[int(l)] for l in np.asarray(labels).reshape(-1)], dtype=np.intp)
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]} is not among the active classes {list(class_ids)}") from None


def is_of_class(x, V, attrs, cols) -> Tensor:
    """Truth that row i of ``x`` belongs to attribute column ``cols[i]``."""
    cols = np.asarray(cols, dtype=np.intp)
    n_classes = ad.as_tensor(attrs).shape[1]
    if cols.size and (cols.min() < 0 or cols.max() >= n_classes):
        raise LabelError(f"class column out of range [0, {n_classes})")
    return _pick(class_scores(x, V, attrs), cols)


def has_same_attribute(e1, e2, alpha: float) -> Tensor:
    """``sigmoid(alpha * cos(e1, e2))``; vectors or row-aligned matrices."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    return ad.sigmoid(alpha * ad.cosine_similarity(e1, e2))


# kept under the operation's own name
ground_has_same_attribute = has_same_attribute


def make_mask(M: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Binary vector of length M with exactly k zeros placed uniformly at random."""
    if not 0 <= k <= M:
        raise ParameterError(f"mask needs 0 <= k <= M, got k={k}, M={M}")
    mask = np.ones(M)
    mask[rng.choice(M, size=k, replace=False)] = 0.0
    return mask


@dataclass
class AttributeTable:
    """Class attribute columns plus the optional macro table and attribute mask."""

    matrix: np.ndarray                 # M x C, columns indexed by class id
    macro: Tensor | None = None        # M x Q, trainable
    mask: np.ndarray | None = None     # length M

    @property
    def n_attributes(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[1]

    def one_hot(self, c: int) -> np.ndarray:
        e = np.zeros(self.n_classes)
        e[c] = 1.0
        return e

    def columns(self, class_ids) -> np.ndarray:
        return self.matrix[:, np.asarray(class_ids, dtype=np.intp)]

    def masked_columns(self, class_ids) -> np.ndarray:
        cols = self.columns(class_ids)
        return cols if self.mask is None else cols * self.mask[:, None]


def init_macro_attributes(M: int, Q: int, rng: np.random.Generator, std: float = 0.01) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=(M, Q)), requires_grad=True)


# -- environment -----------------------------------------------------------

class Arg(NamedTuple):
    values: object     # Tensor (features / vectors) or integer ndarray (labels)
    sort: str


PredicateFn = Callable[[list[Arg]], Tensor]


@dataclass(frozen=True)
class VarSpec:
    domain: str
    sort: str


@dataclass
class GroundingEnv:
    """Domains of instances, variable bindings and predicate groundings.

    ``domains[d][sort]`` holds the values of sort ``sort`` for each instance
    of domain ``d`` (first axis). ``variables`` is the paired-axis registry:
    variables mapped to the same domain index the same instances.
    """

    domains: dict[str, dict[str, object]] = field(default_factory=dict)
    variables: dict[str, VarSpec] = field(default_factory=dict)
    predicates: dict[str, PredicateFn] = field(default_factory=dict)
    signature: Signature = field(default_factory=flvn_signature)
    constants: dict[str, tuple[object, str]] = field(default_factory=dict)
    params: dict[str, object] = field(default_factory=dict)

    def add_domain(self, name: str, **columns) -> None:
        sizes = {k: len(v) for k, v in columns.items()}
        if len(set(sizes.values())) > 1:
            raise DimensionError(f"domain {name!r} has columns of unequal length {sizes}")
        self.domains[name] = dict(columns)

    def size(self, domain: str) -> int:
        cols = self.domains[domain]
        return len(next(iter(cols.values()))) if cols else 0

    def bind(self, var: str, domain: str, sort: str) -> None:
        if domain not in self.domains or sort not in self.domains[domain]:
            raise ConfigurationError(f"domain {domain!r} has no values of sort {sort!r}")
        self.variables[var] = VarSpec(domain, sort)

    def bind_constant(self, name: str, value, sort: str) -> None:
        self.constants[name] = (value, sort)

    def values(self, var: str):
        spec = self.variables[var]
        return self.domains[spec.domain][spec.sort]

    def resolve(self, group: tuple[str, ...], sorts: dict[str, frozenset[str]]) -> dict[str, VarSpec]:
        """Bind each variable of one quantifier group to a domain column."""
        out: dict[str, VarSpec] = {}
        for v in group:
            if v in self.variables:
                out[v] = self.variables[v]
        anchor = next((s.domain for s in out.values() if s.sort not in LABEL_SORTS), None)
        if anchor is None and out:
            anchor = next(iter(out.values())).domain
        for v in group:
            if v in out:
                continue
            cand = sorts.get(v, frozenset())
            picked = None
            if anchor is not None:
                fits = [s for s in sorted(cand) if s in self.domains.get(anchor, {})]
                if len(fits) == 1:
                    picked = VarSpec(anchor, fits[0])
            if picked is None and len(cand) == 1:
                (s,) = cand
                dom = DEFAULT_DOMAIN.get(s)
                if dom in self.domains and s in self.domains[dom]:
                    picked = VarSpec(dom, s)
            if picked is None:
                raise ConfigurationError(f"cannot bind variable {v!r} (candidate sorts {sorted(cand)})")
            out[v] = picked
            if anchor is None:
                anchor = picked.domain
        domains = {s.domain for s in out.values()}
        sizes = {self.size(d) for d in domains}
        if len(sizes) > 1:
            raise DimensionError(f"diag group {group} spans domains of unequal size {sorted(domains)}")
        return out


def flvn_env(features: Tensor, labels, V: Tensor, table: AttributeTable, seen, *,
             macro_labels=None, alpha: float = 1.0, present=None) -> GroundingEnv:
    """Environment for one training batch.

    ``features`` are the pooled (pre-projection) features of the batch. The
    class-score softmax runs over the ``seen`` classes; attribute-vector
    variables range over the ``present`` classes (default: those in the batch).
    """
    labels = np.asarray(labels, dtype=np.int64)
    seen = np.asarray(sorted(int(c) for c in seen), dtype=np.int64)
    present = np.unique(labels) if present is None else np.asarray(present, dtype=np.int64)
    env = GroundingEnv()
    batch_cols = {IMAGE: features, CLASS_LABEL: labels}
    if macro_labels is not None:
        batch_cols[MACRO_LABEL] = np.asarray(macro_labels, dtype=np.int64)
    env.add_domain(BATCH, **batch_cols)
    env.add_domain(CLASSES, **{ATTRIBUTE_VECTOR: Tensor(table.columns(present).T), CLASS_LABEL: present})
    env.add_domain(SEEN, **{SEEN_CLASS_LABEL: seen})
    if table.macro is not None:
        env.add_domain(MACROS, **{MACRO_LABEL: np.arange(table.macro.shape[1])})
    for v in ("x", "x1", "x2"):
        env.bind(v, BATCH, IMAGE)
    for v in ("l", "l1", "l2"):
        env.bind(v, BATCH, CLASS_LABEL)
    if macro_labels is not None:
        env.bind("q", BATCH, MACRO_LABEL)
    env.bind("a", CLASSES, ATTRIBUTE_VECTOR)
    env.bind("la", CLASSES, CLASS_LABEL)
    env.bind("lseen", SEEN, SEEN_CLASS_LABEL)
    env.predicates.update(flvn_predicates(V, table, seen, alpha))
    env.params.update(V=V, table=table, seen=seen, alpha=alpha)
    return env


def flvn_predicates(V: Tensor, table: AttributeTable, seen, alpha: float) -> dict[str, PredicateFn]:
    seen = np.asarray(seen, dtype=np.int64)
    seen_attrs = Tensor(table.columns(seen))

    def is_of_class_fn(args: list[Arg]) -> Tensor:
        x, l = args
        return is_of_class(x.values, V, seen_attrs, label_columns(l.values, seen))

    def is_of_class_masked_fn(args: list[Arg]) -> Tensor:
        x, l = args
        attrs = seen_attrs if table.mask is None else Tensor(table.masked_columns(seen))
        return is_of_class(x.values, V, attrs, label_columns(l.values, seen))

    def is_of_macro_fn(args: list[Arg]) -> Tensor:
        if table.macro is None:
            raise ConfigurationError("isOfMacro needs a class hierarchy; disable the axiom instead")
        x, q = args
        return is_of_class(x.values, V, table.macro, np.asarray(q.values, dtype=np.intp))

    def has_same_attribute_fn(args: list[Arg]) -> Tensor:
        emb = [ad.matmul(a.values, V) if a.sort == IMAGE else ad.as_tensor(a.values) for a in args]
        return has_same_attribute(emb[0], emb[1], alpha)

    return {
        "isOfClass": is_of_class_fn,
        "isOfClassMasked": is_of_class_masked_fn,
        "isOfMacro": is_of_macro_fn,
        "hasSameAttribute": has_same_attribute_fn,
    }


def _paired(env: GroundingEnv, pred: str, vars_: tuple[str, ...]) -> Tensor:
    specs = [env.variables[v] for v in vars_]
    sizes = {env.size(s.domain) for s in specs}
    if len(sizes) != 1:
        raise DimensionError(f"variables {vars_} are not paired")
    return env.predicates[pred]([Arg(env.values(v), s.sort) for v, s in zip(vars_, specs)])


def ground_is_of_class(env: GroundingEnv, x_var: str, label_var: str) -> Tensor:
    return _paired(env, "isOfClass", (x_var, label_var))


def ground_is_of_macro(env: GroundingEnv, x_var: str, macro_var: str) -> Tensor:
    return _paired(env, "isOfMacro", (x_var, macro_var))


def ground_is_of_class_masked(env: GroundingEnv, x_var: str, seen_label_var: str, mask=None) -> Tensor:
    """Masked class truth; ``mask`` overrides the mask stored in the environment."""
    if mask is None:
        return _paired(env, "isOfClassMasked", (x_var, seen_label_var))
    table: AttributeTable = env.params["table"]
    seen = env.params["seen"]
    mask = np.asarray(mask, dtype=float)
    if mask.shape != (table.n_attributes,):
        raise DimensionError(f"mask length {mask.shape} does not match M={table.n_attributes}")
    attrs = Tensor(table.columns(seen) * mask[:, None])
    return is_of_class(env.values(x_var), env.params["V"], attrs,
                       label_columns(env.values(seen_label_var), seen))


# -- formula evaluation ------------------------------------------------------

@dataclass
class Evaluation:
    truth: Tensor       # scalar
    vacuous: bool       # no index set contributed a genuine term


@dataclass
class _Axis:
    domain: str
    size: int
    vars: dict[str, VarSpec]


def _axis_of(axes: list[_Axis], var: str) -> int | None:
    for k in range(len(axes) - 1, -1, -1):
        if var in axes[k].vars:
            return k
    return None


def _expand(arr: np.ndarray, k: int, rank: int) -> np.ndarray:
    shape = [1] * rank
    shape[k] = arr.shape[0]
    return arr.reshape(shape)


def _eval_pred(f: Pred, env: GroundingEnv, axes: list[_Axis]):
    full = tuple(a.size for a in axes)
    ks = []
    for t in f.terms:
        k = _axis_of(axes, t)
        if k is None and t not in env.constants:
            raise ConfigurationError(f"variable {t!r} is not bound")
        ks.append(k)
    used = sorted({k for k in ks if k is not None})
    fn = env.predicates.get(f.name)
    if fn is None:
        raise ConfigurationError(f"no grounding for predicate {f.name!r}")
    n_points = int(np.prod([axes[k].size for k in used])) if used else 1
    valid = np.ones(full, dtype=bool)
    vac = np.zeros(full, dtype=bool)
    if n_points == 0:
        return ad.Tensor(np.ones(full)), valid, vac
    grids = np.meshgrid(*[np.arange(axes[k].size) for k in used], indexing="ij")
    flat = {k: g.reshape(-1) for k, g in zip(used, grids)}
    args = []
    for t, k in zip(f.terms, ks):
        if k is None:
            value, sort = env.constants[t]
            idx = np.zeros(n_points, dtype=np.intp)
            value = value if isinstance(value, Tensor) else np.asarray(value)
            value = value.reshape((1,) + tuple(value.shape)) if isinstance(value, np.ndarray) and value.ndim == 0 else value
        else:
            spec = axes[k].vars[t]
            value, sort, idx = env.domains[spec.domain][spec.sort], spec.sort, flat[k]
        if isinstance(value, Tensor):
            args.append(Arg(ad.take_rows(value, idx), sort))
        else:
            args.append(Arg(np.asarray(value)[idx], sort))
    out = fn(args)
    grid_shape = [1] * len(axes)
    for k in used:
        grid_shape[k] = axes[k].size
    out = ad.reshape(out, tuple(grid_shape))
    if out.shape != full:
        out = ad.broadcast_to(out, full)
    return out, valid, vac


def _label_values(env: GroundingEnv, axes: list[_Axis], var: str) -> np.ndarray:
    k = _axis_of(axes, var)
    rank = len(axes)
    if k is None:
        value, _ = env.constants[var]
        return np.asarray(value).reshape((1,) * rank)
    spec = axes[k].vars[var]
    return _expand(np.asarray(env.domains[spec.domain][spec.sort]), k, rank)


def _eval(f: Formula, env: GroundingEnv, cfg: FuzzyConfig, axes: list[_Axis], sorts):
    if isinstance(f, Pred):
        return _eval_pred(f, env, axes)
    if isinstance(f, Not):
        v, valid, vac = _eval(f.body, env, cfg, axes, sorts)
        return fuzzy_not(v), valid, vac
    if isinstance(f, (Implies, And, Or)):
        a, va, ca = _eval(f.lhs, env, cfg, axes, sorts)
        b, vb, cb = _eval(f.rhs, env, cfg, axes, sorts)
        op = {Implies: fuzzy_implies, And: fuzzy_and, Or: fuzzy_or}[type(f)]
        return op(a, b), va & vb, ca & cb
    if isinstance(f, Quant):
        specs = env.resolve(f.binding.vars, sorts)
        domain = next(iter(specs.values())).domain
        axis = _Axis(domain, env.size(domain), specs)
        inner = axes + [axis]
        rank = len(inner)
        vals, valid, vac = _eval(f.body, env, cfg, inner, sorts)
        include = valid.copy()
        if f.guard is not None:
            lhs = _label_values(env, inner, f.guard.lhs)
            rhs = _label_values(env, inner, f.guard.rhs)
            include &= (lhs == rhs) if f.guard.op == "==" else (lhs != rhs)
        new = np.arange(axis.size)
        for j, outer in enumerate(axes):
            if outer.domain == domain:
                include &= _expand(np.arange(outer.size), j, rank) != _expand(new, rank - 1, rank)
        empty = ~include.any(axis=-1)
        all_vacuous = np.all(~include | vac, axis=-1)
        if f.kind == "forall":
            out = agg_forall(vals, cfg.p_forall, mask=include, grad_floor=cfg.clamp_eps)
            return out, np.ones(empty.shape, dtype=bool), empty | all_vacuous
        out = agg_exists(vals, cfg.p_exists, mask=include, grad_floor=cfg.clamp_eps)
        return out, ~empty, empty | all_vacuous
    raise TypeError(f"not a formula: {f!r}")


def evaluate(formula: Formula, env: GroundingEnv, config: FuzzyConfig | None = None) -> Evaluation:
    """Truth of a closed formula, plus whether it held only vacuously."""
    config = config or FuzzyConfig()
    sorts = infer_sorts(formula, env.signature)
    truth, valid, vac = _eval(formula, env, config, [], sorts)
    if not bool(valid):
        return Evaluation(Tensor(1.0), True)
    return Evaluation(truth, bool(vac))


def eval_formula(formula: Formula, env: GroundingEnv, config: FuzzyConfig | None = None) -> Tensor:
    return evaluate(formula, env, config).truth
