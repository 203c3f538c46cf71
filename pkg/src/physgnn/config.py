"""Experiment configuration: defaults, JSON loading and key validation."""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .spectral import SpectralConfig
from .sync import SyncConfig
from .thermo import ThermoConfig

PHASES = ("thermo", "sync", "spectral")
COMPONENTS = PHASES + ("fusion", "adaptive")


@dataclass
class LossConfig:
    lambda_class: float = 1.0
    lambda_physics: float = 1.0
    focal_gamma: float = 2.5
    class_balance: str = "inverse_frequency"  # | effective_number | off
    effective_beta: float = 0.999
    lambda_ent: float = 0.0
    lambda_calib: float = 1.0
    lambda_phase: float = 1.0
    class_weight_shrink: float = 1.0
    physics_weight_grad: bool = False  # let the physics term move the ensemble weights

    def validate(self):
        if self.lambda_class < 0 or self.lambda_physics < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lambda_class == 0 and self.lambda_physics == 0:
            raise ConfigError("lambda_class and lambda_physics cannot both be zero")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be nonnegative")
        if self.class_balance not in ("inverse_frequency", "effective_number", "off"):
            raise ConfigError(f"unknown class_balance {self.class_balance!r}")


@dataclass
class OptimConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 1.0
    epochs: int = 300
    patience: int = 30
    schedule: str = "cosine"  # | constant

    def validate(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


@dataclass
class SplitConfig:
    imbalance_ratio: float = 10.0
    train_fraction: float = 0.4
    val_fraction: float = 0.5
    mode: str = "graded"  # | step
    seed: int | None = None


@dataclass
class ExperimentConfig:
    hidden_dim: int = 128
    dropout: float = 0.1
    seed: int = 0
    reject_enabled: bool = True
    alpha_frozen: bool = False
    alpha_init: float = 0.9  # start physics-dominant; the neural head tends to memorize
    ablate: list = field(default_factory=list)
    minority_rule: str = "below_mean"
    heat: ThermoConfig = field(default_factory=ThermoConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def uses(self, component: str) -> bool:
        return component not in self.ablate

    @property
    def active_phases(self) -> tuple:
        return tuple(p for p in PHASES if self.uses(p))

    def validate(self):
        unknown = set(self.ablate) - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown ablation(s) {sorted(unknown)}; valid: {', '.join(COMPONENTS)}")
        if not self.active_phases:
            raise ConfigError("at least one phase must remain enabled")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be positive")
        if not 0.0 < self.alpha_init < 1.0:
            raise ConfigError("alpha_init must lie in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        self.loss.validate()
        self.optim.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        for key, value in flatten(overrides).items():
            set_key(cfg, key, value)
        return cfg.validate()


# short names accepted at the top level of a config file or on the CLI
ALIASES = {
    "lr": "optim.lr",
    "weight_decay": "optim.weight_decay",
    "epochs": "optim.epochs",
    "patience": "optim.patience",
    "clip_norm": "optim.clip_norm",
    "focal_gamma": "loss.focal_gamma",
    "lambda_class": "loss.lambda_class",
    "lambda_physics": "loss.lambda_physics",
    "lambda_ent": "loss.lambda_ent",
    "class_balance": "loss.class_balance",
    "integrator": "heat.integrator",
    "coordinate_mode": "spectral.coordinate_mode",
    "imbalance_ratio": "split.imbalance_ratio",
    "train_fraction": "split.train_fraction",
}


def valid_keys() -> list:
    keys = []
    for f in dataclasses.fields(ExperimentConfig):
        default = getattr(ExperimentConfig(), f.name)
        if dataclasses.is_dataclass(default):
            keys.extend(f"{f.name}.{sub.name}" for sub in dataclasses.fields(default))
        else:
            keys.append(f.name)
    return sorted(keys + list(ALIASES))


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def set_key(cfg: ExperimentConfig, key: str, value):
    key = ALIASES.get(key, key)
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part) or not dataclasses.is_dataclass(getattr(target, part)):
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(valid_keys())}")
        target = getattr(target, part)
    leaf = parts[-1]
    names = {f.name for f in dataclasses.fields(target)}
    if leaf not in names or dataclasses.is_dataclass(getattr(target, leaf)):
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(valid_keys())}")
    if leaf == "betas":
        value = tuple(value)
    if leaf == "ablate" and isinstance(value, str):
        value = [v for v in value.replace("+", ",").split(",") if v]
    setattr(target, leaf, value)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    cfg = ExperimentConfig().with_overrides(raw)
    return cfg.with_overrides(overrides or {})


def config_from_dict(d: dict) -> ExperimentConfig:
    return ExperimentConfig().with_overrides(d)
