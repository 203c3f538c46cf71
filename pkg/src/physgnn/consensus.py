"""Consensus fusion of the phase outputs and the final decision rule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import AlphaOutOfRange, ShapeMismatch
from .tensor import Tensor

REJECT = -1


@dataclass
class PhaseOutput:
    embedding: Tensor
    probs: Tensor
    consistency: Tensor


@dataclass
class ConsensusDecision:
    fused: Tensor | None
    ensemble_weights: Tensor
    physics_probs: Tensor
    final_probs: Tensor
    class_weights: Tensor | None
    thresholds: Tensor | None
    labels: np.ndarray | None = None


def fuse(fuse_weight, gain, bias, embeddings) -> Tensor:
    """``GELU(LayerNorm([U; Z_sync; Z_spec] W_fuse))``."""
    rows = {e.shape[0] for e in embeddings}
    if len(rows) != 1:
        raise ShapeMismatch(f"phase embeddings disagree on row count: {sorted(rows)}")
    cat = T.concat(list(embeddings), axis=-1)
    return T.gelu(T.layer_norm(T.matmul(cat, fuse_weight), gain, bias))


def ensemble_weights(base_logits, calibrations) -> Tensor:
    """Row-wise ``softmax(p + eps_i)``; ``calibrations`` is (N, M) or None."""
    logits = T.as_tensor(base_logits)
    if calibrations is not None:
        logits = calibrations + logits
    return T.softmax(logits)


def physics_ensemble(weights, phase_probs) -> Tensor:
    weights = T.as_tensor(weights)
    if weights.ndim == 1:
        weights = T.reshape(weights, (1, -1))
    if weights.shape[-1] != len(phase_probs):
        raise ShapeMismatch(f"{weights.shape[-1]} weights for {len(phase_probs)} phases")
    out = None
    for m, probs in enumerate(phase_probs):
        term = weights[:, m:m + 1] * probs
        out = term if out is None else out + term
    return out


def blend(physics_probs, neural_probs, alpha) -> Tensor:
    """``alpha * y_physics + (1 - alpha) * y_neural``; ``alpha`` may be a Tensor."""
    a = float(np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha))
    if not 0.0 <= a <= 1.0:
        raise AlphaOutOfRange(f"alpha={a} outside [0, 1]")
    if isinstance(alpha, Tensor):
        return alpha * physics_probs + (1.0 - alpha) * neural_probs
    return T.scale(physics_probs, a) + T.scale(neural_probs, 1.0 - a)


def class_weights(weight_head, fused, h0) -> Tensor:
    return T.softplus(weight_head.pre_activation(T.concat([fused, h0], axis=-1))) + 1e-6


def adaptive_thresholds(threshold_head, fused, h0) -> Tensor:
    return T.reshape(T.sigmoid(threshold_head.pre_activation(T.concat([fused, h0], axis=-1))), (-1,))


def decide(final_probs, weights=None, thresholds=None, reject_enabled: bool = True) -> np.ndarray:
    """Class-weighted argmax, then reject where ``max_c p <= tau``.

    Ties go to the smallest class index (numpy argmax semantics).
    """
    p = np.asarray(final_probs.data if isinstance(final_probs, Tensor) else final_probs, dtype=float)
    w = None if weights is None else np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=float)
    if w is not None and w.shape != p.shape:
        raise ShapeMismatch(f"class weights {w.shape} vs probabilities {p.shape}")
    scores = p * w if w is not None else p
    labels = scores.argmax(axis=1).astype(np.int64)
    if reject_enabled and thresholds is not None:
        tau = np.asarray(thresholds.data if isinstance(thresholds, Tensor) else thresholds, dtype=float)
        labels = np.where(p.max(axis=1) <= tau, REJECT, labels)
    return labels


def bayes_threshold_oracle(p0: float, p1: float, c_fn: float, c_fp: float) -> float:
    if c_fn <= 0 or c_fp <= 0:
        raise ValueError("costs must be positive")
    if abs(p0 + p1 - 1.0) > 1e-9:
        raise ValueError("class posteriors must sum to one")
    return c_fn * p0 / (c_fn * p0 + c_fp * p1)
