"""Heat-diffusion phase: learned sources, Euler integration, readout."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ConfigError, ExplicitInstability, ShapeMismatch
from .nn import normalized_readout
from .tensor import Tensor


class Integrator(str, enum.Enum):
    EXPLICIT = "explicit_euler"
    IMPLICIT = "implicit_euler_cg"


@dataclass
class ThermoConfig:
    steps: int = 25
    kappa: float = 1.0
    dt: float | None = None  # None -> integrator-specific default
    integrator: str = Integrator.EXPLICIT.value
    per_step_source: bool = False
    cg_tolerance: float = 1e-8
    cg_max_iter: int = 500
    keep_trajectory: bool = False

    def resolved_dt(self, lambda_max_bound: float) -> float:
        if self.dt is not None:
            return float(self.dt)
        if Integrator(self.integrator) is Integrator.EXPLICIT:
            return 0.9 * (2.0 / lambda_max_bound) / self.kappa
        return 0.1

    def validate(self, lambda_max_bound: float):
        if self.steps < 0:
            raise ConfigError("heat.steps must be >= 0")
        if self.kappa <= 0:
            raise ConfigError("heat.kappa must be positive")
        dt = self.resolved_dt(lambda_max_bound)
        if dt <= 0:
            raise ConfigError("heat.dt must be positive")
        if Integrator(self.integrator) is Integrator.EXPLICIT and dt * self.kappa >= 2.0 / lambda_max_bound:
            raise ConfigError(
                f"explicit Euler unstable: dt*kappa={dt * self.kappa:.4g} >= 2/lambda_max={2.0 / lambda_max_bound:.4g}"
            )


def lambda_max_bound(laplacian) -> float:
    """Gershgorin upper bound on the Laplacian spectrum (2 * max degree for D - A)."""
    lap = sp.csr_matrix(laplacian)
    bound = float(np.abs(lap).sum(axis=1).max()) if lap.shape[0] else 0.0
    return max(bound, 1e-12)


@dataclass
class ThermalField:
    U: Tensor
    trajectory: list | None = None


def generate_sources(source_head, h0) -> Tensor:
    """Nonnegative per-node source intensities, shape (N, 1)."""
    return T.softplus(source_head.pre_activation(h0))


def init_field(h0, sources) -> ThermalField:
    h0, sources = T.as_tensor(h0), T.as_tensor(sources)
    if sources.ndim == 1:
        sources = T.reshape(sources, (-1, 1))
    if sources.shape != (h0.shape[0], 1):
        raise ShapeMismatch(f"sources {sources.shape} do not match embeddings {h0.shape}")
    return ThermalField(h0 * sources)


def diffuse(field: ThermalField, laplacian, config: ThermoConfig, sources=None) -> ThermalField:
    """Run ``config.steps`` Euler steps of ``dU/dt = -kappa L U (+ S)``."""
    bound = lambda_max_bound(laplacian)
    config.validate(bound)
    dt = config.resolved_dt(bound)
    kappa = config.kappa
    n = laplacian.shape[0]
    U = field.U
    forcing = None
    if config.per_step_source:
        if sources is None:
            raise ConfigError("per_step_source requires the source vector")
        s = T.as_tensor(sources)
        forcing = T.scale(T.reshape(s, (n, 1)) if s.ndim == 1 else s, dt)
    traj = [U] if config.keep_trajectory else None
    start = float(np.linalg.norm(U.data))
    if Integrator(config.integrator) is Integrator.EXPLICIT:
        for _ in range(config.steps):
            U = U - T.scale(T.spmm(laplacian, U), dt * kappa)
            if forcing is not None:
                U = U + forcing
            if traj is not None:
                traj.append(U)
    else:
        system = sp.csr_matrix(sp.identity(n) + (dt * kappa) * sp.csr_matrix(laplacian))
        for _ in range(config.steps):
            rhs = U + forcing if forcing is not None else U
            U = T.solve_spd(system, rhs, config.cg_tolerance, config.cg_max_iter)
            if traj is not None:
                traj.append(U)
    end = float(np.linalg.norm(U.data))
    if not np.isfinite(end) or end > 1e6 * max(start, 1.0):
        raise ExplicitInstability(f"field norm grew from {start:.3e} to {end:.3e}")
    return ThermalField(U, traj)


def thermo_readout(classifier_head, field: ThermalField) -> Tensor:
    return normalized_readout(classifier_head, field.U)


def thermo_consistency(field: ThermalField, laplacian, sources) -> Tensor:
    """Mean squared equilibrium residual ``||L U - S 1^T||_F^2 / (N D)``."""
    U = field.U
    s = T.as_tensor(sources)
    if s.ndim == 1:
        s = T.reshape(s, (-1, 1))
    # the steady state of dU/dt = -kappa L U + S exists only for a zero-mean source
    resid = T.spmm(laplacian, U) - (s - T.mean(s))
    n, d = U.shape
    return T.scale(T.tsum(resid * resid), 1.0 / (n * d))
