import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physgnn import tensor as T
from physgnn.consensus import (
    REJECT,
    adaptive_thresholds,
    bayes_threshold_oracle,
    blend,
    class_weights,
    decide,
    ensemble_weights,
    fuse,
    physics_ensemble,
)
from physgnn.errors import AlphaOutOfRange, ShapeMismatch
from physgnn.nn import MlpHead, ParamRegistry, init_params
from physgnn.tensor import Tensor, gradcheck_params, make_rng


def dists(rng, n, c):
    x = rng.random((n, c)) + 1e-3
    return x / x.sum(axis=1, keepdims=True)


# -- fusion and ensembles ------------------------------------------------

def test_fuse_shapes_and_gradcheck(rng):
    reg = ParamRegistry()
    w = reg.add("w", (9, 4))
    gain = reg.add("g", (4,), kind="gain")
    bias = reg.add("b", (4,), kind="bias")
    init_params(reg, 0)
    embs = [Tensor(rng.standard_normal((5, 3))) for _ in range(3)]
    out = fuse(w, gain, bias, embs)
    assert out.shape == (5, 4) and np.all(np.isfinite(out.data))
    perm = rng.permutation(5)
    permuted = fuse(w, gain, bias, [Tensor(e.data[perm]) for e in embs]).data
    np.testing.assert_allclose(permuted, out.data[perm], atol=1e-14)
    mix = Tensor(rng.standard_normal((5, 4)))
    assert gradcheck_params(lambda: T.tsum(fuse(w, gain, bias, embs) * mix), [w, gain, bias]) < 1e-5
    with pytest.raises(ShapeMismatch):
        fuse(w, gain, bias, [Tensor(np.ones((5, 3))), Tensor(np.ones((4, 3))), Tensor(np.ones((5, 3)))])


def test_ensemble_weights_examples(rng):
    np.testing.assert_allclose(ensemble_weights(np.zeros(3), None).data, 1 / 3)
    cal = Tensor(rng.standard_normal((6, 3)))
    base = rng.standard_normal(3)
    w = ensemble_weights(Tensor(base), cal).data
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(w >= 0)
    shifted = ensemble_weights(Tensor(base + 7.0), cal).data
    np.testing.assert_allclose(shifted, w, atol=1e-12)


def test_physics_ensemble_vertex_and_oracle(rng):
    probs = [Tensor(dists(rng, 4, 3)) for _ in range(3)]
    np.testing.assert_array_equal(physics_ensemble(np.array([1.0, 0, 0]), probs).data, probs[0].data)
    w = dists(rng, 4, 3)
    expected = sum(w[:, [m]] * probs[m].data for m in range(3))
    np.testing.assert_allclose(physics_ensemble(Tensor(w), probs).data, expected, atol=1e-12)
    same = [probs[0]] * 3
    np.testing.assert_allclose(physics_ensemble(Tensor(w), same).data, probs[0].data, atol=1e-15)
    with pytest.raises(ShapeMismatch):
        physics_ensemble(np.ones(2) / 2, probs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_physics_ensemble_convexity(seed):
    rng = make_rng(seed)
    probs = [dists(rng, 6, 4) for _ in range(3)]
    out = physics_ensemble(Tensor(dists(rng, 6, 3)), [Tensor(p) for p in probs]).data
    stack = np.stack(probs)
    assert np.all(out >= stack.min(axis=0) - 1e-12) and np.all(out <= stack.max(axis=0) + 1e-12)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_blend_examples(rng):
    phys, neural = Tensor(dists(rng, 5, 3)), Tensor(dists(rng, 5, 3))
    np.testing.assert_allclose(blend(phys, neural, 1.0).data, phys.data)
    np.testing.assert_allclose(blend(phys, neural, 0.0).data, neural.data)
    np.testing.assert_allclose(blend(phys, neural, 0.5).data, (phys.data + neural.data) / 2, atol=1e-15)
    np.testing.assert_allclose(blend(phys, neural, Tensor(0.3)).data.sum(axis=1), 1.0, atol=1e-12)
    for bad in (-0.1, 1.5):
        with pytest.raises(AlphaOutOfRange):
            blend(phys, neural, bad)


# -- class weights and thresholds -----------------------------------------

def heads(rng):
    reg = ParamRegistry()
    wh = MlpHead(reg, "w", 6, 4, 3)
    th = MlpHead(reg, "t", 6, 4, 1)
    init_params(reg, 0)
    for t in reg.tensors():
        t.data = t.data + 0.3 * rng.standard_normal(t.shape)
    return reg, wh, th


def test_class_weights_positive_and_pointwise(rng):
    reg, wh, _ = heads(rng)
    fused = rng.standard_normal((5, 3))
    h0 = rng.standard_normal((5, 3))
    fused[4], h0[4] = fused[1], h0[1]
    w = class_weights(wh, Tensor(fused * 50), Tensor(h0 * 50)).data
    assert np.all(w > 0)
    w = class_weights(wh, Tensor(fused), Tensor(h0)).data
    np.testing.assert_array_equal(w[4], w[1])
    mix = Tensor(rng.standard_normal((5, 3)))
    f = lambda: T.tsum(class_weights(wh, Tensor(fused), Tensor(h0)) * mix)  # noqa: E731
    assert gradcheck_params(f, reg.tensors()[:4]) < 1e-5


def test_thresholds_range_and_zero_preactivation(rng):
    reg = ParamRegistry()
    th = MlpHead(reg, "t", 6, 4, 1)  # all-zero parameters
    x = Tensor(rng.standard_normal((5, 3)))
    np.testing.assert_allclose(adaptive_thresholds(th, x, x).data, 0.5)
    _, _, th = heads(rng)
    tau = adaptive_thresholds(th, Tensor(rng.standard_normal((50, 3)) * 20), Tensor(rng.standard_normal((50, 3)))).data
    assert tau.shape == (50,) and np.all((tau >= 0) & (tau <= 1))


# -- decision rule --------------------------------------------------------

def test_decide_worked_example():
    p = np.array([[0.4, 0.6]])
    w = np.array([[2.0, 1.0]])
    assert decide(p, w).tolist() == [0]
    assert decide(p, w, np.array([0.7])).tolist() == [REJECT]
    assert decide(p, w, np.array([0.7]), reject_enabled=False).tolist() == [0]


def test_decide_basic_rules(rng):
    p = dists(rng, 20, 4)
    np.testing.assert_array_equal(decide(p, np.ones_like(p)), p.argmax(axis=1))
    assert np.all(decide(p, None, np.zeros(20)) != REJECT)
    assert decide(np.array([[0.5, 0.5]])).tolist() == [0]  # tie to smallest index
    with pytest.raises(ShapeMismatch):
        decide(p, np.ones((20, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_decide_argmax_invariance(seed):
    rng = make_rng(seed)
    p = dists(rng, 10, 3)
    w = rng.random((10, 3)) + 0.1
    scale = rng.random((10, 1)) * 10 + 0.01
    np.testing.assert_array_equal(decide(p, w), decide(p, w * scale))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reject_monotone_in_threshold(seed):
    rng = make_rng(seed)
    p = dists(rng, 15, 3)
    w = rng.random((15, 3)) + 0.1
    lo = rng.random(15)
    hi = np.minimum(lo + rng.random(15), 1.0)
    a, b = decide(p, w, lo), decide(p, w, hi)
    changed = a != b
    assert np.all(b[changed] == REJECT) and np.all(a[changed] != REJECT)


def test_bayes_threshold_examples():
    assert bayes_threshold_oracle(0.5, 0.5, 1.0, 1.0) == 0.5
    assert bayes_threshold_oracle(0.2, 0.8, 3.0, 1.0) == pytest.approx(0.4286, abs=1e-4)
    assert bayes_threshold_oracle(0.2, 0.8, 1e12, 1.0) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        bayes_threshold_oracle(0.2, 0.8, 0.0, 1.0)
    with pytest.raises(ValueError):
        bayes_threshold_oracle(0.2, 0.7, 1.0, 1.0)


def test_independent_error_product():
    from physgnn.verify import verify_theorem3

    res = verify_theorem3()
    assert res.passed
    assert abs(res.measured - 0.06) < 0.003
