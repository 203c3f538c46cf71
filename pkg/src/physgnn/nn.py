"""Parameterized blocks: linear layers, MLP heads, phase projections."""
from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeMismatch
from .tensor import Tensor

PARAMS_FORMAT = "physgnn-params"
PARAMS_VERSION = 1


class ParamRegistry:
    """Named parameter tensors in insertion order."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, shape, kind: str = "weight") -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        init = np.ones(shape) if kind == "gain" else np.zeros(shape)
        t = Tensor(init, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self) -> list:
        return list(self._params)

    def tensors(self) -> list:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_scalars(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ConfigError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in self._params.items():
            arr = np.asarray(state[k], dtype=float)
            if arr.shape != v.shape:
                raise ShapeMismatch(f"{k}: stored {arr.shape}, expected {v.shape}")
            v.data = arr.copy()


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(registry: ParamRegistry, seed: int, scheme: str = "glorot_uniform"):
    """Glorot-uniform weights, zero biases, unit LayerNorm gains."""
    if scheme != "glorot_uniform":
        raise ConfigError(f"unknown init scheme {scheme!r}")
    rng = T.make_rng(seed)
    for name, t in registry:
        if name.endswith(".weight") and t.ndim == 2:
            a = glorot_bound(*t.shape)
            t.data = rng.uniform(-a, a, size=t.shape)
        elif name.endswith(".gain"):
            t.data = np.ones(t.shape)
        else:
            t.data = np.zeros(t.shape)
        t.grad = None


def save_params(registry: ParamRegistry, path, metadata: dict | None = None):
    record = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "metadata": metadata or {},
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()} for name, t in registry
        },
    }
    Path(path).write_text(json.dumps(record))


def read_params(path) -> tuple[dict, dict]:
    record = json.loads(Path(path).read_text())
    if record.get("format") != PARAMS_FORMAT:
        raise ConfigError(f"{path}: not a parameter file")
    if record.get("version") != PARAMS_VERSION:
        raise ConfigError(f"{path}: unsupported parameter file version {record.get('version')}")
    state = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in record["params"].items()}
    return state, record.get("metadata", {})


class Linear:
    def __init__(self, registry: ParamRegistry, name: str, d_in: int, d_out: int, bias: bool = True):
        self.d_in, self.d_out = d_in, d_out
        self.weight = registry.add(f"{name}.weight", (d_in, d_out))
        self.bias = registry.add(f"{name}.bias", (d_out,), kind="bias") if bias else None

    def __call__(self, x) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeMismatch(f"linear expects {self.d_in} input columns, got {x.shape}")
        out = T.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


_OUTPUT_ACTIVATIONS = {
    None: lambda x: x,
    "softplus": T.softplus,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
}


class MlpHead:
    """Two linear layers with GELU between and an optional output nonlinearity."""

    def __init__(self, registry, name, d_in, d_hidden, d_out, output=None):
        if output not in _OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {output!r}")
        self.layers = [Linear(registry, f"{name}.0", d_in, d_hidden), Linear(registry, f"{name}.1", d_hidden, d_out)]
        self.output = output
        self.output_dim = d_out

    def pre_activation(self, x) -> Tensor:
        h = T.gelu(self.layers[0](x))
        return self.layers[1](h)

    def __call__(self, x) -> Tensor:
        return _OUTPUT_ACTIVATIONS[self.output](self.pre_activation(x))


def normalized_readout(classifier_head, x, eps: float = 1e-6) -> Tensor:
    """``softmax(head(LN(x)))`` with a parameter-free row normalization.

    Normalizing first keeps the head's confidence independent of the
    embedding's overall scale, which the physics penalties tend to shrink.
    """
    return T.softmax(classifier_head(T.layer_norm(x, eps=eps)))


class PhaseProjection:
    """``Dropout(GELU(LayerNorm(x W + b)))`` with learned LayerNorm gain/bias."""

    def __init__(self, registry, name, d_in, d_hidden, dropout: float = 0.0):
        self.linear = Linear(registry, name, d_in, d_hidden)
        self.gain = registry.add(f"{name}.ln.gain", (d_hidden,), kind="gain")
        self.ln_bias = registry.add(f"{name}.ln.bias", (d_hidden,), kind="bias")
        self.p = dropout

    def __call__(self, x, training: bool = False, rng=None) -> Tensor:
        h = T.layer_norm(self.linear(x), self.gain, self.ln_bias)
        return T.dropout(T.gelu(h), self.p, training, rng)
