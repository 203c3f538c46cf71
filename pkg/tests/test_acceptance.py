"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
written straight to the terminal, bypassing output capture.
"""
import json
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from physgnn import experiment as X
from physgnn import verify as V
from physgnn.cli import main
from physgnn.config import ExperimentConfig
from physgnn.data import SbmSpec, generate_sbm, load_dataset, make_imbalanced_split, write_dataset
from physgnn.eigen import topk_smallest_eigenpairs
from physgnn.gradchecks import END_TO_END_TOL, PRIMITIVE_TOL, run_gradchecks
from physgnn.graph import build_laplacian, random_connected_graph
from physgnn.tensor import make_rng


@pytest.fixture
def report(capsys):
    def emit(number, passed, message, seconds, limit=None):
        budget = "" if limit is None else f" (limit {limit:.0f}s)"
        ok = passed and (limit is None or seconds < limit)
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {message} [{seconds:.1f}s{budget}]")
        return ok
    return emit


def test_c01_gradient_integrity(report):
    t0 = time.perf_counter()
    rows = run_gradchecks("small")
    prim = max(r.error for r in rows if not r.name.startswith("end_to_end"))
    e2e = max(r.error for r in rows if r.name.startswith("end_to_end"))
    ok = prim < PRIMITIVE_TOL and e2e < END_TO_END_TOL
    msg = f"max primitive error {prim:.2e} (< {PRIMITIVE_TOL:g}), end-to-end {e2e:.2e} (< {END_TO_END_TOL:g})"
    assert report(1, ok, msg, time.perf_counter() - t0, 120)


def test_c02_heat_contraction_rate(report):
    t0 = time.perf_counter()
    res = V.verify_lemma1(trials=20, n_max=50)
    n = len(res.details["cases"])
    ok = res.verdict == V.PASS and n >= 23
    msg = f"max |measured - 1/(1+dt*kappa*lambda2)| = {res.details['max_error']:.2e} over {n} graphs (< 1e-6)"
    assert report(2, ok, msg, time.perf_counter() - t0, 60)


def test_c03_sync_threshold(report):
    t0 = time.perf_counter()
    res = V.verify_lemma2(trials=10, n_max=20)
    n = len(res.details["cases"])
    ok = res.verdict == V.PASS and n >= 11
    msg = (f"spread at 2Kc <= {res.measured['max_spread_at_2kc']:.1e}, at 0.05Kc >= "
           f"{res.measured['min_spread_at_0.05kc']:.2e} (threshold 1e-3) over {n} graphs")
    assert report(3, ok, msg, time.perf_counter() - t0, 120)


def test_c04_cheeger_sandwich(report):
    t0 = time.perf_counter()
    res = V.verify_cheeger(trials=200, n_max=10)
    ok = res.verdict == V.PASS and res.details["graphs"] >= 200
    msg = f"{res.measured['violations']} violations over {res.details['graphs']} graphs"
    assert report(4, ok, msg, time.perf_counter() - t0, 120)


def test_c05_independent_error_product(report):
    t0 = time.perf_counter()
    res = V.verify_theorem3(samples=100_000)
    msg = (f"Monte-Carlo {res.measured:.5f} vs product {res.predicted:.3f}, "
           f"|diff| {abs(res.measured - res.predicted):.5f} <= 4 SE = {res.tolerance:.5f}")
    assert report(5, res.verdict == V.PASS, msg, time.perf_counter() - t0, 30)


def test_c06_weight_fixed_point(report):
    t0 = time.perf_counter()
    res = V.verify_theorem2()
    msg = f"L-inf distance to closed-form weights {res.details['linf']:.2e} (< 1e-3)"
    assert report(6, res.verdict == V.PASS, msg, time.perf_counter() - t0)


def test_c07_lanczos_vs_dense(report):
    t0 = time.perf_counter()
    rng = make_rng(17)
    worst, sizes = 0.0, []
    for n in (60, 120, 200):
        lap = build_laplacian(random_connected_graph(n, 6.0 / n, rng))
        dense = topk_smallest_eigenpairs(lap, 16, method="dense")
        lz = topk_smallest_eigenpairs(lap, 16, method="lanczos")
        worst = max(worst, float(np.abs(dense.values - lz.values).max()))
        sizes.append(n)
    msg = f"max eigenvalue error {worst:.2e} (< 1e-8), N = {sizes}, k = 16"
    assert report(7, worst < 1e-8, msg, time.perf_counter() - t0)


def sbm300(seed):
    return generate_sbm(SbmSpec(class_sizes=[100, 100, 100], seed=seed))


def test_c08_imbalance_benefit(report):
    t0 = time.perf_counter()
    seeds = range(5)
    full = ExperimentConfig()
    class_only = ExperimentConfig().with_overrides({"lambda_physics": 0.0, "ablate": ["fusion", "adaptive"]})
    scores = {"full": [], "class_only": []}
    for seed in seeds:
        ds = sbm300(seed)
        split = make_imbalanced_split(ds, 10.0, seed=seed)
        for name, cfg in (("full", full), ("class_only", class_only)):
            res = X.train_and_evaluate(ds, cfg.with_overrides({"seed": seed}), split)
            h = X.headline(res.metrics)
            scores[name].append((h["bacc"], h["minority_recall"]))
    f = np.array(scores["full"]).mean(axis=0)
    c = np.array(scores["class_only"]).mean(axis=0)
    gain = f - c
    ok = gain[0] >= 0.05 and gain[1] >= 0.05
    msg = (f"bAcc full {f[0]:.3f} vs classification-only {c[0]:.3f} (gain {gain[0]:+.3f}, need +0.050); "
           f"minority recall {f[1]:.3f} vs {c[1]:.3f} (gain {gain[1]:+.3f}, need +0.050)")
    assert report(8, ok, msg, time.perf_counter() - t0, 600)


def test_c09_degradation_with_imbalance(report):
    t0 = time.perf_counter()
    ratios = [1, 5, 25, 50]
    ds = sbm300(0)
    means = []
    for ir in ratios:
        vals = []
        for seed in range(3):
            split = make_imbalanced_split(ds, float(ir), seed=seed)
            res = X.train_and_evaluate(ds, ExperimentConfig().with_overrides({"seed": seed}), split)
            vals.append(X.headline(res.metrics)["bacc"])
        means.append(float(np.mean(vals)))
    rho = spearmanr(ratios, means).statistic
    msg = f"mean bAcc {dict(zip(ratios, np.round(means, 3).tolist()))}, Spearman rho {rho:+.2f} (<= 0)"
    assert report(9, rho <= 0, msg, time.perf_counter() - t0)


def test_c10_determinism(report, tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "data"
    write_dataset(sbm300(3), data)
    fast = ["--set", "hidden_dim=16", "--set", "epochs=20"]
    codes = [main(["train", "--data", str(data), "--out", str(tmp_path / r), *fast]) for r in ("a", "b")]
    same = (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()
    msg = f"exit codes {codes}, metrics.json byte-identical: {same}"
    assert report(10, codes == [0, 0] and same, msg, time.perf_counter() - t0)


def test_c11_loader_fidelity(report, tmp_path):
    t0 = time.perf_counter()
    # no converted citation dataset ships with the package; fall back to the round trip
    ds = generate_sbm(SbmSpec(class_sizes=[40, 30, 20, 10], feature_dim=17, seed=5))
    split = make_imbalanced_split(ds, 4.0, seed=5)
    write_dataset(ds, tmp_path / "d", split)
    back = load_dataset(tmp_path / "d")
    ok = (back.num_nodes, back.features.shape[1], back.num_classes) == (100, 17, 4)
    ok &= np.array_equal(back.graph.edges, ds.graph.edges) and np.array_equal(back.labels, ds.labels)
    ok &= back.features.tobytes() == ds.features.tobytes()
    ok &= json.loads((tmp_path / "d" / "split.json").read_text())["test"] == split.test.tolist()
    msg = f"round trip N={back.num_nodes} D={back.features.shape[1]} C={back.num_classes}, bit-exact: {bool(ok)}"
    assert report(11, bool(ok), msg, time.perf_counter() - t0)
