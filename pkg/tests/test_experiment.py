import csv
import json

import numpy as np
import pytest

from physgnn import experiment as X
from physgnn.config import ExperimentConfig
from physgnn.data import SbmSpec, generate_sbm

FAST = {"hidden_dim": 6, "epochs": 4, "patience": 4}


@pytest.fixture(scope="module")
def dataset():
    return generate_sbm(SbmSpec(class_sizes=[24, 18, 12], seed=1))


def test_train_and_evaluate_metrics_layout(dataset):
    res = X.train_and_evaluate(dataset, ExperimentConfig().with_overrides(FAST))
    m = res.metrics
    assert m["split"] == "test" and m["num_nodes"] == len(res.split.test)
    for policy in ("reject_as_error", "reject_excluded"):
        assert 0 <= m[policy]["coverage"] <= 1
    assert 1 <= m["best_epoch"] <= m["stopped_epoch"] <= 4


def test_write_and_reload_checkpoint(dataset, tmp_path):
    res = X.train_and_evaluate(dataset, ExperimentConfig().with_overrides(FAST))
    X.write_run(res, tmp_path / "run", dataset)
    names = {p.name for p in (tmp_path / "run").iterdir()}
    assert {"checkpoint.json", "metrics.json", "history.csv", "config-resolved.json", "split.json"} <= names
    model, ctx, split, meta = X.load_checkpoint(tmp_path / "run" / "checkpoint.json", dataset)
    assert np.array_equal(split.test, res.split.test)
    a = res.model.predict(res.context).decision.final_probs.data
    b = model.predict(ctx).decision.final_probs.data
    assert a.tobytes() == b.tobytes()
    rows = list(csv.DictReader(open(tmp_path / "run" / "history.csv")))
    assert len(rows) == res.report.stopped_epoch and list(rows[0]) == list(X.HISTORY_FIELDS)


def test_checkpoint_dimension_mismatch(dataset, tmp_path):
    res = X.train_and_evaluate(dataset, ExperimentConfig().with_overrides(FAST))
    X.write_run(res, tmp_path / "run", dataset)
    other = generate_sbm(SbmSpec(class_sizes=[24, 18, 12], feature_dim=5, seed=1))
    with pytest.raises(ValueError):
        X.load_checkpoint(tmp_path / "run" / "checkpoint.json", other)


def test_parse_vary():
    assert X.parse_vary("lr=0.001,0.01") == [{"lr": 0.001}, {"lr": 0.01}]
    assert X.parse_vary("lambda_class,lambda_physics=1:0,1:1") == [
        {"lambda_class": 1, "lambda_physics": 0}, {"lambda_class": 1, "lambda_physics": 1}]
    with pytest.raises(ValueError):
        X.parse_vary("lr")
    with pytest.raises(ValueError):
        X.parse_vary("a,b=1")


def test_parse_ablate():
    assert X.parse_ablate("phase=thermo,sync+spectral") == [
        {"ablate": []}, {"ablate": ["thermo"]}, {"ablate": ["sync", "spectral"]}]


def test_sweep_and_aggregate(dataset):
    rows = X.run_sweep(dataset, ExperimentConfig().with_overrides(FAST), X.parse_ablate("fusion"), [0, 1])
    assert [r["label"] for r in rows] == ["full", "full", "-fusion", "-fusion"]
    agg = X.aggregate(rows)
    assert [a["label"] for a in agg] == ["full", "-fusion"]
    vals = [r["bacc"] for r in rows[:2]]
    assert agg[0]["bacc_mean"] == pytest.approx(np.mean(vals))
    assert agg[0]["bacc_std"] == pytest.approx(np.std(vals))


def test_headline_reads_policy():
    m = {"reject_as_error": {"balanced_accuracy": 0.5, "macro_f1": 0.4, "minority_recall": None,
                             "accuracy": 0.6, "coverage": 0.9}}
    assert X.headline(m) == {"bacc": 0.5, "macro_f1": 0.4, "minority_recall": None, "accuracy": 0.6,
                             "coverage": 0.9}


def test_metrics_json_is_sorted(dataset, tmp_path):
    res = X.train_and_evaluate(dataset, ExperimentConfig().with_overrides(FAST))
    X.write_run(res, tmp_path / "r", dataset)
    text = (tmp_path / "r" / "metrics.json").read_text()
    assert list(json.loads(text)) == sorted(json.loads(text))
