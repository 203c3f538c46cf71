"""Kuramoto synchronization phase."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DisconnectedGraph, ShapeMismatch
from .nn import normalized_readout
from .tensor import Tensor


@dataclass
class SyncConfig:
    steps: int = 50
    coupling: float = 1.0
    dt: float = 0.1
    phase_init: str = "zero"  # or "seeded_uniform"
    normalized: bool = True   # divide coupling by |N_i|
    keep_trajectory: bool = False


@dataclass
class OscillatorState:
    theta: Tensor
    omega: Tensor
    trajectory: list | None = None


def learn_frequencies(freq_head, h0) -> Tensor:
    """Natural frequencies in (-1, 1), shape (N,)."""
    pre = freq_head.pre_activation(h0)
    return T.reshape(T.tanh(pre), (-1,))


def initial_phases(n: int, config: SyncConfig, rng=None) -> Tensor:
    if config.phase_init == "zero":
        return Tensor(np.zeros(n))
    if config.phase_init == "seeded_uniform":
        if rng is None:
            raise ValueError("seeded_uniform phase init needs an rng")
        return Tensor(rng.uniform(-np.pi, np.pi, size=n))
    raise ValueError(f"unknown phase_init {config.phase_init!r}")


def integrate_phases(theta0, omega, graph, config: SyncConfig) -> OscillatorState:
    """Forward-Euler Kuramoto steps.

    Uses ``sum_j A_ij sin(th_j - th_i) = cos(th_i) (A sin th)_i - sin(th_i) (A cos th)_i``
    so each step costs two sparse products.  Isolated nodes drift at their
    natural frequency.
    """
    theta = T.as_tensor(theta0)
    omega = T.as_tensor(omega)
    n = graph.num_nodes
    if theta.shape != (n,) or omega.shape != (n,):
        raise ShapeMismatch(f"theta {theta.shape} / omega {omega.shape} vs {n} nodes")
    budget = config.dt * (float(np.abs(omega.data).max(initial=0.0)) + config.coupling)
    if budget >= 1.0:
        warnings.warn(f"Kuramoto step budget dt*(|w|max+K)={budget:.3g} >= 1", RuntimeWarning, stacklevel=2)
    adj = graph.adjacency
    if config.normalized:
        gain = config.coupling / np.maximum(graph.degrees, 1).astype(float)
    else:
        gain = np.full(n, float(config.coupling))
    gain = Tensor(gain * config.dt)
    drift = T.scale(omega, config.dt)
    traj = [theta] if config.keep_trajectory else None
    for _ in range(config.steps):
        s, c = T.sin(theta), T.cos(theta)
        coupling = c * T.spmm(adj, s) - s * T.spmm(adj, c)
        theta = theta + drift + gain * coupling
        if traj is not None:
            traj.append(theta)
    return OscillatorState(theta, omega, traj)


def order_parameter(theta) -> tuple[float, float]:
    th = np.asarray(theta.data if isinstance(theta, Tensor) else theta, dtype=float)
    z = np.exp(1j * th).mean()
    return float(abs(z)), float(np.angle(z))


def order_parameter_tensor(theta) -> Tensor:
    """Differentiable ``r``."""
    theta = T.as_tensor(theta)
    c = T.mean(T.cos(theta))
    s = T.mean(T.sin(theta))
    return T.power(c * c + s * s + 1e-16, 0.5)


def sync_encoding(h0, state: OscillatorState) -> Tensor:
    h0 = T.as_tensor(h0)
    n = h0.shape[0]
    if state.theta.shape != (n,):
        raise ShapeMismatch(f"theta {state.theta.shape} vs {n} embedding rows")
    col = lambda t: T.reshape(t, (n, 1))  # noqa: E731
    return T.concat([h0, col(T.cos(state.theta)), col(T.sin(state.theta)), col(state.omega)], axis=-1)


def sync_readout(classifier_head, encoding) -> Tensor:
    return normalized_readout(classifier_head, encoding)


def sync_consistency(state: OscillatorState) -> Tensor:
    """``1 - r`` at the final phases; zero at perfect synchrony."""
    return 1.0 - order_parameter_tensor(state.theta)


def critical_coupling(omega, lambda2: float) -> float:
    if lambda2 <= 1e-12:
        raise DisconnectedGraph("critical coupling needs lambda_2 > 0 (connected graph)")
    w = np.asarray(omega.data if isinstance(omega, Tensor) else omega, dtype=float)
    return float(2.0 * (w.max() - w.min()) / lambda2)
