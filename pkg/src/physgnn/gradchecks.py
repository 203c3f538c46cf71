"""Finite-difference checks for every primitive and for the assembled model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .tensor import Tensor, make_rng

PRIMITIVE_TOL = 1e-6
END_TO_END_TOL = 1e-4


@dataclass
class GradcheckRow:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _param(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _spd(rng, n):
    a = rng.standard_normal((n, n))
    return sp.csr_matrix(a @ a.T + n * np.eye(n))


def primitive_cases(seed: int = 0) -> dict:
    """name -> (function, params); each function reduces to a scalar via random weights."""
    rng = make_rng(seed)
    n, d = 5, 4
    x, y = _param(rng, (n, d)), _param(rng, (n, d))
    pos = _param(rng, (n, d), 0.5, 2.0)
    w = _param(rng, (d, 3))
    vec = _param(rng, (d,))
    gain, bias = _param(rng, (d,), 0.5, 1.5), _param(rng, (d,))
    lap = sp.csr_matrix(rng.random((n, n)) < 0.5, dtype=float)
    spd = _spd(rng, n)
    idx = np.array([0, 2, 2, 4])
    labels = rng.integers(0, d, size=n)
    mix = Tensor(rng.standard_normal((n, d)))
    mix3 = Tensor(rng.standard_normal((n, 3)))

    def red(t, m=mix):
        return T.tsum(t * m)

    return {
        "add": (lambda: red(x + y), [x, y]),
        "add_broadcast": (lambda: red(x + vec), [x, vec]),
        "sub": (lambda: red(x - y), [x, y]),
        "mul": (lambda: red(x * y), [x, y]),
        "div": (lambda: red(x / pos), [x, pos]),
        "scale": (lambda: red(T.scale(x, -2.5)), [x]),
        "power": (lambda: red(T.power(pos, 1.7)), [pos]),
        "matmul": (lambda: red(x @ w, mix3), [x, w]),
        "spmm": (lambda: red(T.spmm(lap, x)), [x]),
        "solve_spd": (lambda: red(T.solve_spd(spd, x, tol=1e-13, max_iter=200)), [x]),
        "concat": (lambda: T.tsum(T.concat([x, y], axis=-1) * Tensor(np.ones((n, 2 * d)) * np.arange(2 * d))), [x, y]),
        "index_select": (lambda: T.tsum(x[idx] * Tensor(np.arange(len(idx) * d).reshape(len(idx), d))), [x]),
        "reshape": (lambda: red(T.reshape(T.reshape(x, (-1,)), (n, d))), [x]),
        "tsum_axis": (lambda: T.tsum(T.tsum(x, axis=0) * vec), [x, vec]),
        "mean": (lambda: T.tsum(T.mean(x, axis=1) * Tensor(np.arange(n, dtype=float))), [x]),
        "sin": (lambda: red(T.sin(x)), [x]),
        "cos": (lambda: red(T.cos(x)), [x]),
        "tanh": (lambda: red(T.tanh(x)), [x]),
        "exp": (lambda: red(T.exp(x)), [x]),
        "log": (lambda: red(T.log(pos)), [pos]),
        "sigmoid": (lambda: red(T.sigmoid(x)), [x]),
        "softplus": (lambda: red(T.softplus(x)), [x]),
        "gelu": (lambda: red(T.gelu(x)), [x]),
        "softmax": (lambda: red(T.softmax(x)), [x]),
        "layer_norm": (lambda: red(T.layer_norm(x, gain, bias)), [x, gain, bias]),
        "nll": (lambda: T.tsum(T.nll(T.softmax(x), labels) * Tensor(np.arange(1.0, n + 1))), [x]),
    }


def check_primitives(seed: int = 0, step: float = 1e-6, stencil: int = 2) -> list:
    rows = []
    for name, (fn, params) in primitive_cases(seed).items():
        rows.append(GradcheckRow(name, T.gradcheck_params(fn, params, step, stencil), PRIMITIVE_TOL))
    return rows


def check_end_to_end(seed: int = 0, step: float = 1e-6, num_nodes: int = 10, hidden_dim: int = 4,
                     integrator: str = "explicit_euler") -> list:
    """Training loss of a tiny model against central differences.

    The calibration term reads detached predictions on purpose, so finite
    differences through the backbone would disagree with backprop by design.
    Two rows are produced: the loss without that term over every parameter,
    and the full loss over the calibration heads alone (whose inputs are
    detached on both sides).  The physics term is checked with its weight
    gradient switched on, so every path through the ensemble is exercised.
    """
    from .config import ExperimentConfig
    from .data import SbmSpec, generate_sbm
    from .model import ConsensusModel, GraphContext
    from .training import class_balance_weights, compute_loss

    ds = generate_sbm(SbmSpec(class_sizes=[num_nodes // 2, num_nodes - num_nodes // 2], p_in=0.7, p_out=0.2,
                              feature_dim=3, seed=seed))
    rows = []
    for tag, lambda_calib, prefix in (("task", 0.0, ""), ("calibration", 1.0, "adaptive.")):
        cfg = ExperimentConfig().with_overrides({
            "hidden_dim": hidden_dim, "dropout": 0.0, "seed": seed, "spectral": {"k": 3},
            "heat": {"integrator": integrator, "steps": 5, "cg_tolerance": 1e-13},
            "sync": {"steps": 5},
            "loss": {"lambda_ent": 0.1, "lambda_calib": lambda_calib, "physics_weight_grad": True},
        })
        ctx = GraphContext.build(ds.graph, ds.features, cfg)
        model = ConsensusModel(3, 2, ctx.coords.shape[1], cfg)
        rng = make_rng(seed + 7)
        for _, p in model.registry:  # move off the structured initialization so no gradient is exactly zero
            p.data = np.asarray(p.data + 0.3 * rng.standard_normal(p.shape), dtype=np.float64)
        train = np.arange(num_nodes)
        beta = class_balance_weights(ds.labels, train, 2, cfg.loss)

        def loss(model=model, ctx=ctx, beta=beta):
            return compute_loss(model, model.forward(ctx, training=False), ds.labels, train, beta)

        for p in model.registry.tensors():
            p.requires_grad = True
        params = [p for name, p in model.registry if name.startswith(prefix)]
        err = T.gradcheck_params(loss, params, step)
        rows.append(GradcheckRow(f"end_to_end[{integrator},{tag},n={num_nodes}]", err, END_TO_END_TOL))
    return rows


def run_gradchecks(scale: str = "small", seed: int = 0) -> list:
    rows = check_primitives(seed)
    rows += check_end_to_end(seed)
    if scale != "small":
        rows += check_end_to_end(seed, integrator="implicit_euler_cg")
        rows += check_end_to_end(seed, num_nodes=16, hidden_dim=6)
    return rows
