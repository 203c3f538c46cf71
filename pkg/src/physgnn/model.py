"""The three-phase consensus model assembled from its parts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import consensus as cs
from . import tensor as T
from .config import PHASES, ExperimentConfig
from .graph import build_laplacian
from .nn import Linear, MlpHead, ParamRegistry, PhaseProjection, init_params
from .spectral import graph_coordinates, spec_consistency, spec_encode, spec_readout
from .sync import (
    initial_phases,
    integrate_phases,
    learn_frequencies,
    sync_consistency,
    sync_encoding,
    sync_readout,
)
from .tensor import Tensor
from .thermo import diffuse, generate_sources, init_field, thermo_consistency, thermo_readout

THRESHOLD_INIT_LOGIT = -4.0


@dataclass
class GraphContext:
    """Per-dataset constants shared by every forward pass."""

    graph: object
    features: Tensor
    laplacian: object
    coords: np.ndarray

    @classmethod
    def build(cls, graph, features, config: ExperimentConfig) -> "GraphContext":
        lap = build_laplacian(graph, config.spectral.laplacian)
        coords = graph_coordinates(graph, config.spectral)
        return cls(graph, Tensor(np.asarray(features, dtype=float)), lap, coords)


@dataclass
class ForwardResult:
    projections: dict
    phases: dict
    decision: cs.ConsensusDecision
    h0: Tensor
    alpha: object
    extras: dict = field(default_factory=dict)


class ConsensusModel:
    """Heat, Kuramoto and spectral phases fused by learned consensus."""

    def __init__(self, d_in: int, num_classes: int, spectral_dim: int, config: ExperimentConfig):
        self.config = config
        self.d_in, self.num_classes, self.spectral_dim = d_in, num_classes, spectral_dim
        d, c = config.hidden_dim, num_classes
        r = self.registry = ParamRegistry()
        self.proj = {p: PhaseProjection(r, f"proj.{p}", d_in, d, config.dropout) for p in PHASES}
        self.source_head = MlpHead(r, "thermo.source", d, d, 1, output="softplus")
        self.heat_cls = MlpHead(r, "thermo.cls", d, d, c)
        self.freq_head = MlpHead(r, "sync.freq", d, d, 1, output="tanh")
        self.sync_cls = MlpHead(r, "sync.cls", d + 3, d, c)
        self.spec_enc = MlpHead(r, "spectral.enc", spectral_dim, d, d)
        self.spec_cls = MlpHead(r, "spectral.cls", d, d, c)
        self.fuse_weight = r.add("fuse.weight", (3 * d + 3, d))
        self.fuse_gain = r.add("fuse.ln.gain", (d,), kind="gain")
        self.fuse_bias = r.add("fuse.ln.bias", (d,), kind="bias")
        self.conf_heads = {p: MlpHead(r, f"confidence.{p}", d, d, 1) for p in PHASES}
        self.base_logits = r.add("ensemble.base_logits", (3,), kind="bias")
        self.neural_cls = MlpHead(r, "neural.cls", d, d, c)
        self.alpha_logit = r.add("blend.alpha_logit", (), kind="bias")
        self.weight_head = MlpHead(r, "adaptive.class_weight", 2 * d, d, c, output="softplus")
        self.threshold_head = MlpHead(r, "adaptive.threshold", 2 * d, d, 1, output="sigmoid")
        init_params(r, config.seed)
        # start with thresholds near zero so nothing is rejected before calibration
        r["adaptive.threshold.1.bias"].data[:] = THRESHOLD_INIT_LOGIT
        # softplus(x) + 1e-6 = 1 at x = log(e - 1): class weights start neutral
        r["adaptive.class_weight.1.bias"].data[:] = np.log(np.e - 1.0)
        r["blend.alpha_logit"].data[...] = np.log(config.alpha_init / (1.0 - config.alpha_init))

    # row blocks of fuse.weight belonging to each phase embedding
    def _fuse_rows(self, phases) -> np.ndarray:
        d = self.config.hidden_dim
        blocks = {"thermo": np.arange(0, d), "sync": np.arange(d, 2 * d + 3), "spectral": np.arange(2 * d + 3, 3 * d + 3)}
        return np.concatenate([blocks[p] for p in phases])

    def forward(self, ctx: GraphContext, training: bool = False, rng=None) -> ForwardResult:
        cfg = self.config
        phases = cfg.active_phases
        x = ctx.features
        proj = {p: self.proj[p](x, training, rng) for p in phases}
        h0 = proj[phases[0]]
        for p in phases[1:]:
            h0 = h0 + proj[p]
        h0 = T.scale(h0, 1.0 / len(phases))

        outputs = {}
        if "thermo" in proj:
            h = proj["thermo"]
            sources = generate_sources(self.source_head, h)
            field_ = diffuse(init_field(h, sources), ctx.laplacian, cfg.heat, sources)
            outputs["thermo"] = cs.PhaseOutput(field_.U, thermo_readout(self.heat_cls, field_),
                                               thermo_consistency(field_, ctx.laplacian, sources))
        if "sync" in proj:
            h = proj["sync"]
            omega = learn_frequencies(self.freq_head, h)
            theta0 = initial_phases(ctx.graph.num_nodes, cfg.sync, rng if cfg.sync.phase_init != "zero" else None)
            state = integrate_phases(theta0, omega, ctx.graph, cfg.sync)
            z = sync_encoding(h, state)
            outputs["sync"] = cs.PhaseOutput(z, sync_readout(self.sync_cls, z), sync_consistency(state))
        if "spectral" in proj:
            z = spec_encode(self.spec_enc, Tensor(ctx.coords))
            outputs["spectral"] = cs.PhaseOutput(z, spec_readout(self.spec_cls, z), spec_consistency(z, ctx.laplacian))

        extras = {}
        probs = [outputs[p].probs for p in phases]
        n = x.shape[0]
        fused = None
        if cfg.uses("fusion") or cfg.uses("adaptive"):
            w_fuse = self.fuse_weight[self._fuse_rows(phases)]
            fused = cs.fuse(w_fuse, self.fuse_gain, self.fuse_bias, [outputs[p].embedding for p in phases])
        if cfg.uses("fusion"):
            calib = T.concat([self.conf_heads[p](fused) for p in phases], axis=-1)
            idx = np.array([PHASES.index(p) for p in phases])
            weights = cs.ensemble_weights(self.base_logits[idx], calib)
            y_phys = cs.physics_ensemble(weights, probs)
            y_neural = T.softmax(self.neural_cls(fused))
            extras["neural_probs"] = y_neural
            alpha = Tensor(cfg.alpha_init) if cfg.alpha_frozen else T.sigmoid(self.alpha_logit)
            y_final = cs.blend(y_phys, y_neural, alpha)
        else:
            weights = Tensor(np.full((n, len(phases)), 1.0 / len(phases)))
            y_phys = cs.physics_ensemble(weights, probs)
            alpha = 1.0
            y_final = y_phys

        w_class = tau = None
        if cfg.uses("adaptive"):
            # calibrators read detached features: they are fit alongside, not through, the model
            f_d, h_d = fused.detach(), h0.detach()
            w_class = cs.class_weights(self.weight_head, f_d, h_d)
            tau = cs.adaptive_thresholds(self.threshold_head, f_d, h_d)

        decision = cs.ConsensusDecision(fused, weights, y_phys, y_final, w_class, tau)
        decision.labels = cs.decide(y_final, w_class, tau, cfg.reject_enabled and tau is not None)
        return ForwardResult(proj, outputs, decision, h0, alpha, extras)

    def predict(self, ctx: GraphContext) -> ForwardResult:
        with T.no_grad():
            return self.forward(ctx, training=False)
