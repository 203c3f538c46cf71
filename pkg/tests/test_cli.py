import csv
import json
import subprocess
import sys

import pytest

from physgnn.cli import EXIT_CHECK, EXIT_IO, EXIT_OK, EXIT_USAGE, main

FAST = ["--set", "hidden_dim=6", "--set", "epochs=3", "--set", "patience=3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"class_sizes": [20, 15, 10], "seed": 2, "split": {"imbalance_ratio": 4}}))
    assert main(["generate", "--spec", str(spec), "--out", str(root / "data")]) == EXIT_OK
    return root / "data"


def test_generate_writes_split(data_dir):
    assert (data_dir / "split.json").is_file()
    assert len((data_dir / "labels.csv").read_text().splitlines()) == 45


def test_info(data_dir, capsys):
    assert main(["info", "--data", str(data_dir)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["num_nodes"] == 45 and info["class_counts"] == [20, 15, 10]


def test_train_then_eval(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out", str(run), *FAST]) == EXIT_OK
    assert "test bAcc" in capsys.readouterr().out
    split = json.loads((data_dir / "split.json").read_text())
    assert json.loads((run / "split.json").read_text())["test"] == split["test"]
    out = tmp_path / "eval"
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(run / "checkpoint.json"),
                 "--split", "val", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "metrics.json").read_text())["split"] == "val"
    rows = list(csv.reader(open(out / "per_class.csv")))
    assert rows[0] == ["class", "precision", "recall", "f1", "train_count"] and len(rows) == 4


def test_train_is_byte_reproducible(data_dir, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--data", str(data_dir), "--out", str(tmp_path / name), *FAST]) == EXIT_OK
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()


def test_config_file_and_unknown_key(data_dir, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--out", str(tmp_path / "r")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "bogus" in err and "optim.lr" in err


def test_missing_data_is_io_error(tmp_path, capsys):
    assert main(["info", "--data", str(tmp_path / "nope")]) == EXIT_IO
    assert capsys.readouterr().err.startswith("error:")


def test_usage_errors(data_dir, tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["train", "--data", str(data_dir)]) == EXIT_USAGE
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path), "--set", "novalue"]) == EXIT_USAGE
    assert main(["sweep", "--data", str(data_dir), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["verify", "--only", "lemma9", "--out", str(tmp_path / "v.json")]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_verify_subset(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert main(["verify", "--only", "theorem3,cheeger", "--out", str(out)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("PASS") and "theorem3" in lines[0]
    assert json.loads(out.read_text())["all_passed"]


def test_verify_failure_exit_code(monkeypatch, tmp_path):
    from physgnn import verify as V

    monkeypatch.setitem(V.CHECKS, "theorem3", lambda seed=0: V.verify_theorem3(samples=1000, num_sigmas=0.0))
    assert main(["verify", "--only", "theorem3", "--out", str(tmp_path / "v.json")]) == EXIT_CHECK


def test_sweep_outputs(data_dir, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data_dir), "--ablate", "phase=fusion", "--seeds", "0,1",
                 "--out", str(out), *FAST]) == EXIT_OK
    runs = list(csv.DictReader(open(out / "runs.csv")))
    agg = list(csv.DictReader(open(out / "aggregate.csv")))
    assert len(runs) == 4 and [a["label"] for a in agg] == ["full", "-fusion"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "physgnn", "info", "--data", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_IO and "error:" in proc.stderr


def test_balanced_sweep_bacc_matches_accuracy(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"class_sizes": [20, 20, 20], "seed": 4}))
    assert main(["generate", "--spec", str(spec), "--out", str(tmp_path / "d")]) == EXIT_OK
    out = tmp_path / "s"
    assert main(["sweep", "--data", str(tmp_path / "d"), "--vary", "imbalance_ratio=1", "--seeds", "1",
                 "--out", str(out), *FAST]) == EXIT_OK
    row = next(csv.DictReader(open(out / "runs.csv")))
    assert abs(float(row["bacc"]) - float(row["accuracy"])) <= 0.02
