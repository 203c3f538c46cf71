import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physgnn.consensus import REJECT
from physgnn.errors import LengthMismatch
from physgnn.metrics import COUNT_AS_ERROR, EXCLUDE, evaluate, minority_classes, write_per_class
from physgnn.tensor import make_rng


def test_perfect_predictions():
    y = np.array([0, 1, 2, 1])
    r = evaluate(y, y, 3, [2])
    assert (r.accuracy, r.balanced_accuracy, r.macro_f1, r.minority_recall, r.coverage) == (1, 1, 1, 1, 1)


def test_binary_worked_example():
    r = evaluate([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert r.recall == [0.5, 1.0]
    assert r.balanced_accuracy == pytest.approx(0.75)
    assert r.macro_f1 == pytest.approx((2 / 3 + 4 / 5) / 2)
    assert r.macro_f1 == pytest.approx(0.7333, abs=1e-4)
    assert r.confusion == [[1, 1], [0, 2]]


def test_all_rejected_is_undefined():
    r = evaluate([0, 1, 1], [REJECT] * 3, 2, [1], EXCLUDE)
    assert r.coverage == 0.0
    assert r.accuracy is None and r.balanced_accuracy is None and r.minority_recall is None


def test_reject_policies_differ():
    t, p = [0, 0, 1, 1], [0, REJECT, 1, 1]
    ex = evaluate(t, p, 2, reject_policy=EXCLUDE)
    err = evaluate(t, p, 2, reject_policy=COUNT_AS_ERROR)
    assert ex.balanced_accuracy == 1.0 and ex.coverage == 0.75
    assert err.balanced_accuracy == pytest.approx(0.75)
    assert np.array(err.confusion).sum(axis=1).tolist() == [1, 2]


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        evaluate([0, 1], [0], 2)


def test_minority_rules():
    assert minority_classes([10, 10, 10]) == []
    assert minority_classes([100, 10, 2]) == [1, 2]
    assert minority_classes([50, 50, 5]) == [2]
    assert minority_classes([100, 10, 2, 50], "bottom_quantile") == [2]
    with pytest.raises(ValueError):
        minority_classes([1, 2], "median")


def test_majority_constant_predictor():
    for c in (2, 3, 5):
        y = make_rng(c).integers(0, c, 200)
        y[:c] = np.arange(c)
        assert evaluate(y, np.zeros_like(y), c).balanced_accuracy == pytest.approx(1 / c)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_invariances(seed):
    rng = make_rng(seed)
    c = 4
    t = rng.integers(0, c, 40)
    p = np.where(rng.random(40) < 0.1, REJECT, rng.integers(0, c, 40))
    base = evaluate(t, p, c, [3], COUNT_AS_ERROR)
    order = rng.permutation(40)
    again = evaluate(t[order], p[order], c, [3], COUNT_AS_ERROR)
    assert again.to_dict() == base.to_dict()
    relabel = rng.permutation(c)
    p2 = np.where(p == REJECT, REJECT, relabel[np.maximum(p, 0)])
    moved = evaluate(relabel[t], p2, c, [], COUNT_AS_ERROR)
    assert moved.balanced_accuracy == pytest.approx(base.balanced_accuracy)
    assert moved.macro_f1 == pytest.approx(base.macro_f1)
    for r in (base, moved):
        assert all(0 <= v <= 1 for v in r.precision + r.recall + r.f1)


def test_per_class_csv(tmp_path):
    r = evaluate([0, 0, 1, 1], [0, 1, 1, 1], 2)
    write_per_class(tmp_path / "pc.csv", r, [5, 1])
    lines = (tmp_path / "pc.csv").read_text().splitlines()
    assert lines[0] == "class,precision,recall,f1,train_count"
    assert lines[2].endswith(",1")
