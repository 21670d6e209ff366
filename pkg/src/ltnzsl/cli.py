"""Command-line entry point: ``ltnzsl <command> ...``.

Exit status is 0 on success and 2 on any validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import generate_synthetic, load_dataset, load_hierarchy, save_dataset
from .errors import LtnZslError, ConfigurationError, MissingFileError
from .evaluation import evaluate, gamma_sweep
from .fol import builtin_axioms, format_axiom, parse_axioms, predicates_used, validate
from .trainer import TrainConfig, TrainHistory, axiom_truths, train

PATH_KEYS = ("dataset", "axiom_file", "hierarchy_file")


def _read_axioms(path):
    if path is None:
        return builtin_axioms()
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"axiom file not found: {p}")
    return parse_axioms(p.read_text(encoding="utf-8"))


def cmd_gen_data(args) -> int:
    ds = generate_synthetic(args.seen, args.unseen, args.attr_dim, args.feat_dim, args.per_class,
                            noise_std=args.noise, seed=args.seed, n_macros=args.macros or None)
    path = save_dataset(ds, args.out)
    print(f"wrote {ds.n} samples ({len(ds.seen)} seen, {len(ds.unseen)} unseen classes) to {path}")
    return 0


def load_train_config(path) -> tuple[TrainConfig, dict]:
    """Split a config file into a TrainConfig and its path entries (resolved against the file)."""
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"config file not found: {p}")
    raw = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    paths = {k: str((p.parent / raw.pop(k)).resolve()) for k in PATH_KEYS if raw.get(k) is not None}
    for k in PATH_KEYS:
        raw.pop(k, None)
    return TrainConfig.from_dict(raw), paths


def cmd_train(args) -> int:
    config, paths = load_train_config(args.config)
    if "dataset" not in paths:
        raise ConfigurationError("config needs a 'dataset' path")
    ds = load_dataset(paths["dataset"])
    if "hierarchy_file" in paths:
        ds.hierarchy = load_hierarchy(paths["hierarchy_file"], ds)
    axioms = _read_axioms(paths.get("axiom_file")) if "axiom_file" in paths else None
    ckpt, history = train(ds, axioms, config)
    out = Path(args.out)
    save_checkpoint(ckpt, out)
    (out / "history.json").write_text(history.to_json(), encoding="utf-8")
    if history.records:
        last = history.records[-1]
        print(f"epoch {last.epoch}: loss={last.loss:.4f} sat={last.sat:.4f} p={last.p:g} lr={last.lr:g}")
    print(f"checkpoint written to {out}")
    return 0


def _parse_gammas(text: str) -> list[float]:
    try:
        vals = [float(g) for g in text.split(",") if g.strip()]
    except ValueError:
        raise ConfigurationError(f"bad gamma list {text!r}") from None
    if not vals:
        raise ConfigurationError("gamma sweep needs at least one value")
    return vals


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    report = evaluate(ckpt, ds, args.gamma)
    if args.sweep:
        rows = gamma_sweep(ckpt, ds, _parse_gammas(args.sweep))
        report.sweep = [vars(r) for r in rows]
        print(f"{'gamma':>6} {'U':>7} {'S':>7} {'H':>7}")
        for r in rows:
            print(f"{r.gamma:6.2f} {r.U:7.4f} {r.S:7.4f} {r.H:7.4f}{'  *' if r.best else ''}")
    print(report.table())
    out = Path(args.out or args.checkpoint) / "report.json"
    out.write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_sat(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    axioms = _read_axioms(args.axioms)
    if ds.hierarchy is None:
        axioms = [a for a in axioms if "isOfMacro" not in predicates_used(a.formula)]
    truths = axiom_truths(ckpt, ds, axioms, split=args.split, max_samples=args.max_samples, seed=args.seed)
    for name, t in truths.items():
        print(f"{name:<12} {t:.6f}")
    return 0


def cmd_check_grad(args) -> int:
    from .gradcheck import run_suite
    results = run_suite(args.seed)
    for name, err in results.items():
        print(f"{name:<14} {err:.3e}")
    worst = max(results.values())
    print(f"max relative error: {worst:.3e}")
    return 0 if worst <= 1e-4 else 1


def cmd_parse(args) -> int:
    axioms = _read_axioms(args.axioms)
    problems = 0
    for ax in axioms:
        for d in validate(ax):
            print(f"{ax.name}: {d}", file=sys.stderr)
            problems += 1
        print(format_axiom(ax))
    return 2 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltnzsl", description="Fuzzy-logic zero-shot learning toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seen", type=int, default=8)
    g.add_argument("--unseen", type=int, default=4)
    g.add_argument("--attr-dim", type=int, default=16)
    g.add_argument("--feat-dim", type=int, default=32)
    g.add_argument("--per-class", type=int, default=25)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--macros", type=int, default=3, help="number of macroclasses (0 for none)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="zero-shot and generalized evaluation")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--gamma", type=float, default=0.0)
    e.add_argument("--sweep", help="comma-separated gamma values")
    e.add_argument("--out", help="report directory (default: the checkpoint directory)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sat", help="per-axiom truth values on a data split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--axioms", help="axiom file (default: built-in axioms)")
    s.add_argument("--split", default="train")
    s.add_argument("--max-samples", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sat)

    c = sub.add_parser("check-grad", help="finite-difference gradient suite")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("parse", help="validate and pretty-print an axiom file")
    p.add_argument("--axioms", required=True)
    p.set_defaults(func=cmd_parse)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LtnZslError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
