"""Imbalance-aware evaluation metrics with reject handling."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .consensus import REJECT
from .errors import LengthMismatch

EXCLUDE = "exclude"        # drop rejected nodes, report coverage
COUNT_AS_ERROR = "error"   # rejected nodes count as misclassified


@dataclass
class EvalReport:
    accuracy: float | None
    balanced_accuracy: float | None
    macro_f1: float | None
    minority_recall: float | None
    precision: list
    recall: list
    f1: list
    confusion: list
    coverage: float
    num_classes: int
    minority_classes: list
    reject_policy: str

    def to_dict(self) -> dict:
        return asdict(self)


def minority_classes(train_counts, rule: str = "below_mean", quantile: float = 0.25) -> list:
    """Classes counted as minority: below the mean count, or in the bottom quantile."""
    counts = np.asarray(train_counts, dtype=float)
    if rule == "below_mean":
        return [int(c) for c in np.flatnonzero(counts < counts.mean())]
    if rule == "bottom_quantile":
        cut = np.quantile(counts, quantile)
        chosen = np.flatnonzero(counts <= cut)
        if len(chosen) == len(counts):
            return []
        return [int(c) for c in chosen]
    raise ValueError(f"unknown minority rule {rule!r}")


def evaluate(y_true, y_pred, num_classes: int, minority=(), reject_policy: str = EXCLUDE) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    if reject_policy not in (EXCLUDE, COUNT_AS_ERROR):
        raise ValueError(f"unknown reject policy {reject_policy!r}")
    covered = y_pred != REJECT
    coverage = float(covered.mean()) if len(y_pred) else 0.0
    c = num_classes
    minority = sorted(int(m) for m in minority)

    if reject_policy == EXCLUDE:
        t, p = y_true[covered], y_pred[covered]
    else:
        t, p = y_true, y_pred
    confusion = np.zeros((c, c), dtype=np.int64)
    ok = p != REJECT
    np.add.at(confusion, (t[ok], p[ok]), 1)
    support = np.bincount(t, minlength=c)  # includes rejected nodes under COUNT_AS_ERROR

    if len(t) == 0:
        nan = [None] * c
        return EvalReport(None, None, None, None, nan, nan, nan, confusion.tolist(), coverage, c, minority,
                          reject_policy)

    tp = np.diag(confusion).astype(float)
    predicted = confusion.sum(axis=0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1), 0.0)
        recall = np.where(support > 0, tp / np.where(support > 0, support, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    present = support > 0
    report = EvalReport(
        accuracy=float(tp.sum() / len(t)),
        balanced_accuracy=float(recall[present].mean()) if present.any() else None,
        macro_f1=float(f1.mean()),
        minority_recall=float(recall[minority].mean()) if minority else None,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        confusion=confusion.tolist(),
        coverage=coverage,
        num_classes=c,
        minority_classes=minority,
        reject_policy=reject_policy,
    )
    return report


def write_metrics(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_per_class(path, report: EvalReport, train_counts):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "train_count"])
        for k in range(report.num_classes):
            w.writerow([k, report.precision[k], report.recall[k], report.f1[k], int(train_counts[k])])
