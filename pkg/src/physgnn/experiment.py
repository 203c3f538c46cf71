"""Run-level orchestration shared by the CLI, sweeps and the acceptance suite."""
from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict
from .data import Dataset, SplitSpec, make_imbalanced_split
from .metrics import COUNT_AS_ERROR, EXCLUDE, evaluate, minority_classes, write_metrics
from .model import ConsensusModel, GraphContext
from .nn import read_params, save_params
from .training import TrainReport, fit

HISTORY_FIELDS = ("epoch", "train_loss", "val_bacc", "val_f1", "lr")


@dataclass
class RunResult:
    config: ExperimentConfig
    split: SplitSpec
    model: ConsensusModel
    context: GraphContext
    report: TrainReport
    metrics: dict


def build_split(dataset: Dataset, config: ExperimentConfig) -> SplitSpec:
    s = config.split
    seed = config.seed if s.seed is None else s.seed
    return make_imbalanced_split(dataset, s.imbalance_ratio, s.train_fraction, seed, s.val_fraction, s.mode)


def build_model(dataset: Dataset, config: ExperimentConfig) -> tuple[ConsensusModel, GraphContext]:
    ctx = GraphContext.build(dataset.graph, dataset.features, config)
    model = ConsensusModel(dataset.features.shape[1], dataset.num_classes, ctx.coords.shape[1], config)
    return model, ctx


def evaluate_model(model: ConsensusModel, ctx: GraphContext, dataset: Dataset, split: SplitSpec,
                   part: str = "test") -> dict:
    """Metrics on one split part under both reject policies."""
    index = getattr(split, part)
    pred = model.predict(ctx).decision.labels
    train_counts = dataset.class_counts(split.train)
    minority = minority_classes(train_counts, model.config.minority_rule)
    y, p = dataset.labels[index], pred[index]
    return {
        "split": part,
        "num_nodes": int(len(index)),
        "train_counts": train_counts.tolist(),
        "reject_as_error": evaluate(y, p, dataset.num_classes, minority, COUNT_AS_ERROR).to_dict(),
        "reject_excluded": evaluate(y, p, dataset.num_classes, minority, EXCLUDE).to_dict(),
    }


def train_and_evaluate(dataset: Dataset, config: ExperimentConfig, split: SplitSpec | None = None) -> RunResult:
    split = split or build_split(dataset, config)
    split.audit(dataset)
    model, ctx = build_model(dataset, config)
    report = fit(model, dataset, split, ctx)
    metrics = evaluate_model(model, ctx, dataset, split, "test")
    metrics.update(best_epoch=report.best_epoch, stopped_epoch=report.stopped_epoch,
                   best_val_bacc=report.best_val_bacc)
    return RunResult(config, split, model, ctx, report, metrics)


def headline(metrics: dict, policy: str = "reject_as_error") -> dict:
    m = metrics[policy]
    return {"bacc": m["balanced_accuracy"], "macro_f1": m["macro_f1"], "minority_recall": m["minority_recall"],
            "accuracy": m["accuracy"], "coverage": m["coverage"]}


# -- run directories -----------------------------------------------------

def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in HISTORY_FIELDS})


def write_run(result: RunResult, out_dir, dataset: Dataset):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config.to_dict()
    (out / "config-resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    (out / "split.json").write_text(json.dumps(result.split.to_json()) + "\n")
    meta = {"config": cfg, "split": result.split.to_json(), "d_in": int(dataset.features.shape[1]),
            "num_classes": int(dataset.num_classes), "spectral_dim": int(result.context.coords.shape[1]),
            "dataset": dataset.name, "best_epoch": result.report.best_epoch}
    save_params(result.model.registry, out / "checkpoint.json", meta)
    write_history(out / "history.csv", result.report.history)
    write_metrics(out / "metrics.json", result.metrics)


def load_checkpoint(path, dataset: Dataset) -> tuple[ConsensusModel, GraphContext, SplitSpec, dict]:
    state, meta = read_params(path)
    cfg = config_from_dict(meta["config"])
    model, ctx = build_model(dataset, cfg)
    if (model.d_in, model.num_classes, model.spectral_dim) != (meta["d_in"], meta["num_classes"], meta["spectral_dim"]):
        raise ValueError("checkpoint does not match the dataset's dimensions")
    model.registry.load_state(state)
    return model, ctx, SplitSpec.from_json(meta["split"]), meta


# -- sweeps --------------------------------------------------------------

def parse_vary(spec: str) -> list[dict]:
    """``key=v1,v2`` or ``k1,k2=a1:b1,a2:b2`` into a list of override dicts."""
    if "=" not in spec:
        raise ValueError(f"--vary expects key=values, got {spec!r}")
    keys, values = spec.split("=", 1)
    keys = [k.strip() for k in keys.split(",") if k.strip()]
    out = []
    for item in values.split(","):
        parts = item.split(":")
        if len(parts) != len(keys):
            raise ValueError(f"value {item!r} does not match keys {keys}")
        out.append({k: json.loads(v) for k, v in zip(keys, parts)})
    return out


def parse_ablate(spec: str) -> list[dict]:
    """``phase=thermo,sync+spectral`` into one override per comma item, plus the full model first."""
    body = spec.split("=", 1)[1] if "=" in spec else spec
    variants = [{"ablate": []}]
    for item in body.replace("|", ",").split(","):
        parts = [p.strip() for p in item.split("+") if p.strip()]
        if parts:
            variants.append({"ablate": parts})
    return variants


def _label(overrides: dict) -> str:
    if "ablate" in overrides:
        return "full" if not overrides["ablate"] else "-" + "-".join(overrides["ablate"])
    return ";".join(f"{k}={v}" for k, v in overrides.items())


def _sweep_job(args):
    dataset, base_dict, overrides, seed = args
    cfg = config_from_dict(base_dict).with_overrides({**overrides, "seed": seed})
    res = train_and_evaluate(dataset, cfg)
    return {"label": _label(overrides), "seed": seed, **{k: json.dumps(v) for k, v in overrides.items()},
            **headline(res.metrics), "best_epoch": res.report.best_epoch}


def run_sweep(dataset: Dataset, base: ExperimentConfig, variants: list[dict], seeds, jobs: int = 1) -> list[dict]:
    tasks = [(dataset, base.to_dict(), v, s) for v, s in itertools.product(variants, seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_job, tasks))
    return [_sweep_job(t) for t in tasks]


def aggregate(rows: list[dict]) -> list[dict]:
    out = []
    for label in dict.fromkeys(r["label"] for r in rows):
        group = [r for r in rows if r["label"] == label]
        agg = {"label": label, "seeds": len(group)}
        for key in ("bacc", "macro_f1", "minority_recall", "accuracy", "coverage"):
            vals = np.array([r[key] for r in group if r[key] is not None], dtype=float)
            agg[f"{key}_mean"] = float(vals.mean()) if len(vals) else None
            agg[f"{key}_std"] = float(vals.std()) if len(vals) else None
        out.append(agg)
    return out


def write_csv(path, rows: list[dict]):
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
