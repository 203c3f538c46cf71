"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 check failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiment as X
from .config import load_config
from .data import SbmSpec, generate_sbm, load_dataset, load_split, make_imbalanced_split, write_dataset
from .errors import ConfigError, DataError, PhysGnnError
from .metrics import evaluate, minority_classes, write_metrics, write_per_class

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from exc


def _log(msg: str):
    print(msg, file=sys.stderr)


# -- subcommands ---------------------------------------------------------

def cmd_generate(args) -> int:
    raw = _read_json(args.spec) if args.spec else {}
    split_cfg = raw.pop("split", None)
    try:
        spec = SbmSpec(**raw)
    except TypeError as exc:
        raise UsageError(f"bad generator spec: {exc}") from exc
    ds = generate_sbm(spec)
    split = None
    if split_cfg is not None:
        split = make_imbalanced_split(ds, split_cfg.get("imbalance_ratio", 1.0), split_cfg.get("train_fraction", 0.4),
                                      split_cfg.get("seed", spec.seed), split_cfg.get("val_fraction", 0.5),
                                      split_cfg.get("mode", "graded"))
    write_dataset(ds, args.out, split)
    print(f"wrote {ds.num_nodes} nodes, {ds.graph.num_edges} edges, {ds.num_classes} classes to {args.out}")
    return EXIT_OK


def cmd_info(args) -> int:
    ds = load_dataset(args.data)
    print(json.dumps({"name": ds.name, "num_nodes": ds.num_nodes, "num_features": int(ds.features.shape[1]),
                      "num_classes": ds.num_classes, "num_edges": ds.graph.num_edges,
                      "class_counts": ds.class_counts().tolist(), **ds.ingest_report}, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg = load_config(args.config, _overrides(args.set))
    split = load_split(args.data)
    if split is None:
        split = X.build_split(ds, cfg)
    result = X.train_and_evaluate(ds, cfg, split)
    X.write_run(result, args.out, ds)
    h = X.headline(result.metrics)
    print(f"best epoch {result.report.best_epoch}: test bAcc {h['bacc']:.4f}  macro-F1 {h['macro_f1']:.4f}  "
          f"minority recall {h['minority_recall']}  coverage {h['coverage']:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model, ctx, split, _ = X.load_checkpoint(args.checkpoint, ds)
    metrics = X.evaluate_model(model, ctx, ds, split, args.split)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.json", metrics)
    index = getattr(split, args.split)
    pred = model.predict(ctx).decision.labels
    counts = ds.class_counts(split.train)
    report = evaluate(ds.labels[index], pred[index], ds.num_classes, minority_classes(counts, model.config.minority_rule))
    write_per_class(out / "per_class.csv", report, counts)
    h = X.headline(metrics)
    print(f"{args.split}: bAcc {h['bacc']:.4f}  macro-F1 {h['macro_f1']:.4f}  coverage {h['coverage']:.3f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite, write_report

    only = [s.strip() for s in args.only.split(",") if s.strip()] if args.only else None
    try:
        results = run_suite(only, seed=args.seed)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    for r in results:
        print(f"{r.verdict:4s}  {r.name:12s}  predicted={_short(r.predicted)}  measured={_short(r.measured)}  "
              f"tol={r.tolerance}")
    if args.out:
        write_report(results, args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    from .gradchecks import run_gradchecks

    rows = run_gradchecks(args.scale, seed=args.seed)
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:44s}  {r.error:.3e}  (tol {r.tolerance:g})")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_CHECK


def cmd_sweep(args) -> int:
    ds = load_dataset(args.data)
    base = load_config(args.config, _overrides(args.set))
    if bool(args.vary) == bool(args.ablate):
        raise UsageError("sweep needs exactly one of --vary or --ablate")
    try:
        variants = X.parse_vary(args.vary) if args.vary else X.parse_ablate(args.ablate)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc)) from exc
    for v in variants:  # fail fast on unknown keys before any training
        base.with_overrides(v)
    seeds = [int(s) for s in args.seeds.split(",")] if "," in args.seeds else list(range(int(args.seeds)))
    rows = X.run_sweep(ds, base, variants, seeds, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    X.write_csv(out / "runs.csv", rows)
    agg = X.aggregate(rows)
    X.write_csv(out / "aggregate.csv", agg)
    for a in agg:
        print(f"{a['label']:32s}  bAcc {a['bacc_mean']:.4f} +- {a['bacc_std']:.4f}  (n={a['seeds']})")
    return EXIT_OK


def _short(x):
    s = json.dumps(x, default=str)
    return s if len(s) <= 60 else s[:57] + "..."


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="physgnn", description="Multi-phase physics-inspired GNN for imbalanced node classification.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic block-model dataset directory")
    p.add_argument("--spec", help="JSON generator spec (SbmSpec fields plus optional 'split' section)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("info", help="print dataset statistics")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("train", help="train one model and write a run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="output directory (default: the checkpoint's directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the theory verification suite")
    p.add_argument("--only", help="comma-separated check names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="verify_report.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scale", choices=("small", "full"), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="grid or ablation sweep over seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--vary", help="key=v1,v2 or k1,k2=a1:b1,a2:b2")
    p.add_argument("--ablate", help="phase=thermo,sync+spectral,fusion,adaptive")
    p.add_argument("--seeds", default="3", help="count, or a comma-separated list")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (OSError, DataError) as exc:
        _log(f"error: {exc}")
        return EXIT_IO
    except PhysGnnError as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
