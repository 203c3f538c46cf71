"""Loss assembly, AdamW with cosine annealing, and the epoch loop."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, LossConfig, OptimConfig
from .consensus import decide
from .errors import EmptyMask
from .metrics import COUNT_AS_ERROR, evaluate
from .model import ConsensusModel, GraphContext
from .tensor import Tensor

log = logging.getLogger(__name__)


def class_balance_weights(labels, mask_index, num_classes: int, config: LossConfig) -> np.ndarray:
    counts = np.bincount(np.asarray(labels)[mask_index], minlength=num_classes).astype(float)
    absent = counts == 0
    if absent.any():
        warnings.warn(f"classes {np.flatnonzero(absent).tolist()} absent from the training mask", RuntimeWarning,
                      stacklevel=2)
    if config.class_balance == "off":
        return np.ones(num_classes)
    safe = np.where(absent, 1.0, counts)
    if config.class_balance == "inverse_frequency":
        beta = counts.sum() / (num_classes * safe)
    else:
        b = config.effective_beta
        beta = (1.0 - b) / (1.0 - b ** safe)
        beta = beta * (num_classes - absent.sum()) / beta[~absent].sum()
    return np.where(absent, 0.0, beta)


def class_balanced_focal_ce(probs, labels, train_index, config: LossConfig, beta=None) -> Tensor:
    """Mean over ``train_index`` of ``beta_y (1 - p_y)^gamma (-log p_y)``."""
    train_index = np.asarray(train_index, dtype=np.int64)
    if len(train_index) == 0:
        raise EmptyMask("training mask is empty")
    labels = np.asarray(labels, dtype=np.int64)
    probs = T.as_tensor(probs)
    if beta is None:
        beta = class_balance_weights(labels, train_index, probs.shape[1], config)
    y = labels[train_index]
    p = T.clip(probs[(train_index, y)], 1e-12, 1.0)
    loss = T.scale(T.log(p), -1.0)
    if config.focal_gamma > 0:
        loss = T.power(1.0 - p, config.focal_gamma) * loss
    loss = loss * Tensor(beta[y])
    return T.mean(loss)


def entropy_regularizer(mean_weights) -> Tensor:
    """``sum_m w_m log w_m`` (negative entropy)."""
    w = T.as_tensor(mean_weights)
    return T.tsum(w * T.log(T.clip(w, 1e-300, 1.0)))


def total_loss(class_loss, consistencies, ensemble_weights, config: LossConfig, calibration=None) -> Tensor:
    """``l_c L_class + l_p sum_m w_m L_phys^m + l_ent R(w) (+ l_cal L_calib)``.

    ``w_m`` is the node-mean ensemble weight of phase m.  Unless
    ``physics_weight_grad`` is set, the weights enter the physics term as
    constants: the residual scales differ across phases and the sync residual
    ``1 - r`` can be driven to zero trivially, so a gradient through ``w``
    would hand the whole ensemble to whichever phase is easiest to satisfy.
    """
    w_bar = T.mean(ensemble_weights, axis=0) if ensemble_weights.ndim == 2 else T.as_tensor(ensemble_weights)
    out = T.scale(class_loss, config.lambda_class)
    if config.lambda_physics:
        w_phys = w_bar if config.physics_weight_grad else w_bar.detach()
        phys = None
        for m, c in enumerate(consistencies):
            term = w_phys[m] * c
            phys = term if phys is None else phys + term
        out = out + T.scale(phys, config.lambda_physics)
    if config.lambda_ent:
        out = out + T.scale(entropy_regularizer(w_bar), config.lambda_ent)
    if calibration is not None and config.lambda_calib:
        out = out + T.scale(calibration, config.lambda_calib)
    return out


def calibration_loss(decision, labels, train_index, config: LossConfig, beta, temperature: float = 0.05) -> Tensor | None:
    """Fit the class-weight and threshold heads on detached predictions.

    Class weights: class-balanced CE of ``normalize(w_class * y_final)``.
    Thresholds: class-balanced BCE of the soft reject indicator
    ``sigmoid((tau - max_c p) / temperature)`` towards "the weighted argmax is wrong".
    """
    if decision.class_weights is None:
        return None
    idx = np.asarray(train_index, dtype=np.int64)
    y = np.asarray(labels)[idx]
    p = decision.final_probs.detach()
    scored = decision.class_weights * p
    q = scored / T.tsum(scored, axis=1, keepdims=True)
    plain = LossConfig(**{**config.__dict__, "focal_gamma": 0.0})
    loss = class_balanced_focal_ce(q, labels, idx, plain, beta)
    cand = (decision.class_weights.data * p.data).argmax(axis=1)[idx]
    wrong = (cand != y).astype(float)
    margin = T.scale(decision.thresholds[idx] - Tensor(p.data[idx].max(axis=1)), 1.0 / temperature)
    s = T.clip(T.sigmoid(margin), 1e-12, 1.0 - 1e-12)
    bce = T.scale(Tensor(wrong) * T.log(s) + Tensor(1.0 - wrong) * T.log(1.0 - s), -1.0)
    # keep node-level class weights near 1 unless the data says otherwise
    log_w = T.log(decision.class_weights[idx])
    shrink = T.mean(T.tsum(log_w * log_w, axis=1))
    return loss + T.mean(bce * Tensor(beta[y])) + T.scale(shrink, config.class_weight_shrink)


# -- optimizer -----------------------------------------------------------

def cosine_lr(base: float, epoch: int, epochs: int, schedule: str = "cosine") -> float:
    if schedule == "constant" or epochs <= 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


class AdamW:
    """Adam with decoupled weight decay (applied to 2-D weights only)."""

    def __init__(self, registry, config: OptimConfig):
        self.registry = registry
        self.config = config
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in registry}
        self.v = {name: np.zeros_like(t.data) for name, t in registry}

    def step(self, lr: float):
        cfg = self.config
        b1, b2 = cfg.betas
        self.step_count += 1
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.registry:
            g = p.grad
            if g is None:
                continue
            if cfg.weight_decay and p.ndim == 2:
                p.data = p.data * (1.0 - lr * cfg.weight_decay)
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def adamw_step(optimizer: AdamW, epoch: int):
    """Clip, then one AdamW update at the scheduled learning rate; returns the lr used."""
    cfg = optimizer.config
    clip_grad_norm(optimizer.registry.tensors(), cfg.clip_norm)
    lr = cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.schedule)
    optimizer.step(lr)
    return lr


# -- training loop -------------------------------------------------------

@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_bacc: float = -1.0
    stopped_epoch: int = 0
    best_state: dict | None = None


def compute_loss(model: ConsensusModel, result, labels, train_index, beta) -> Tensor:
    cfg = model.config.loss
    dec = result.decision
    class_loss = class_balanced_focal_ce(dec.final_probs, labels, train_index, cfg, beta)
    if cfg.lambda_phase:
        # per-phase supervision keeps every branch a classifier in its own right
        phases = model.config.active_phases
        heads = [result.phases[p].probs for p in phases]
        if "neural_probs" in result.extras:
            heads.append(result.extras["neural_probs"])
        aux = [class_balanced_focal_ce(h, labels, train_index, cfg, beta) for h in heads]
        total = aux[0]
        for a in aux[1:]:
            total = total + a
        class_loss = class_loss + T.scale(total, cfg.lambda_phase / len(heads))
    consistencies = [result.phases[p].consistency for p in model.config.active_phases]
    calib = calibration_loss(dec, labels, train_index, cfg, beta) if cfg.lambda_calib else None
    return total_loss(class_loss, consistencies, dec.ensemble_weights, cfg, calib)


def validation_score(model, ctx, labels, index, num_classes) -> tuple:
    result = model.predict(ctx)
    dec = result.decision
    pred = decide(dec.final_probs, dec.class_weights, dec.thresholds,
                  model.config.reject_enabled and dec.thresholds is not None)
    rep = evaluate(labels[index], pred[index], num_classes, reject_policy=COUNT_AS_ERROR)
    return rep.balanced_accuracy or 0.0, rep.macro_f1 or 0.0


def fit(model: ConsensusModel, dataset, split, ctx: GraphContext | None = None, callback=None) -> TrainReport:
    """Full-graph training with early stopping on validation balanced accuracy.

    The best-on-validation parameters are restored into ``model`` before returning.
    """
    cfg: ExperimentConfig = model.config
    ctx = ctx or GraphContext.build(dataset.graph, dataset.features, cfg)
    labels = np.asarray(dataset.labels)
    train_index = np.asarray(split.train, dtype=np.int64)
    beta = class_balance_weights(labels, train_index, dataset.num_classes, cfg.loss)
    optimizer = AdamW(model.registry, cfg.optim)
    rng = T.make_rng(cfg.seed + 1)
    report = TrainReport(best_state=model.registry.state())
    waited = 0
    for epoch in range(cfg.optim.epochs):
        model.registry.zero_grad()
        result = model.forward(ctx, training=True, rng=rng)
        loss = compute_loss(model, result, labels, train_index, beta)
        loss.backward()
        lr = adamw_step(optimizer, epoch)
        val_bacc, val_f1 = validation_score(model, ctx, labels, split.val, dataset.num_classes)
        row = {"epoch": epoch + 1, "train_loss": float(loss.data), "val_bacc": val_bacc, "val_f1": val_f1, "lr": lr}
        report.history.append(row)
        if callback is not None:
            callback(row)
        report.stopped_epoch = epoch + 1
        if val_bacc > report.best_val_bacc:
            report.best_val_bacc = val_bacc
            report.best_epoch = epoch + 1
            report.best_state = model.registry.state()
            waited = 0
        else:
            waited += 1
            if waited >= cfg.optim.patience:
                log.info("early stop at epoch %d (best %d)", epoch + 1, report.best_epoch)
                break
    model.registry.load_state(report.best_state)
    return report
