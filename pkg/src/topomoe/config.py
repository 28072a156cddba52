"""Run configuration: every model/training hyperparameter with its default."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass
class RunConfig:
    # representation backbone
    gat_layers: int = 2
    heads: int = 4                 # H
    experts: int = 16              # P
    filtrations: int = 12          # U
    d0: int = 7                    # raw lane feature width
    d1: int = 7                    # topological signature width
    d: int = 7                     # vertex embedding width
    d_obs: int = 28                # readout width
    # decision heads
    first_layer: int = 128
    tokens: int = 4                # B
    tmoe_out: int = 64
    actions: int = 2
    # optimization
    gae_lambda: float = 0.97
    gamma: float = 0.99
    clip_eps: float = 0.3
    entropy_coeff: float = 0.003
    sgd_epochs: int = 5
    lr: float = 5e-4
    envs: int = 15
    shared_params: bool = True
    repr_loss_coeff: float = 0.5   # weight of the representation loss in the joint objective
    adv_norm: bool = True
    # simulator
    alpha: float = 1.0
    beta: float = 1.0
    control_interval: int = 10
    teleport_threshold: float = 60.0
    yellow: float = 3.0
    episode_len: int = 300

    def validate(self) -> "RunConfig":
        positive = ["gat_layers", "heads", "experts", "filtrations", "d0", "d1", "d",
                    "d_obs", "first_layer", "tokens", "tmoe_out", "actions", "sgd_epochs",
                    "envs", "control_interval", "episode_len"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        for name in ["gae_lambda", "gamma", "clip_eps", "entropy_coeff", "lr",
                     "repr_loss_coeff", "alpha", "beta", "teleport_threshold", "yellow"]:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.first_layer % self.tokens != 0:
            raise ConfigurationError(
                f"first layer width {self.first_layer} must be divisible by token count {self.tokens}")
        if self.d1 > self.heads * self.experts:
            raise ConfigurationError("d1 must not exceed heads * experts")
        if self.teleport_threshold <= self.yellow:
            raise ConfigurationError("teleport threshold must exceed yellow duration")
        return self

    @property
    def token_size(self) -> int:
        return self.first_layer // self.tokens

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    kind = _FIELD_TYPES[name]
    if kind == "bool" or kind is bool:
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ConfigurationError(f"cannot parse boolean for {name}: {value!r}")
        return bool(value)
    if kind == "int" or kind is int:
        return int(value)
    return float(value)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then dotted command-line overrides."""
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a JSON object")
        values.update(doc)
    if overrides:
        values.update(overrides)
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    return RunConfig(**coerced).validate()


def parse_overrides(pairs: list[str]) -> dict:
    """Parse ``key=value`` strings from the command line."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out
