"""Training configuration: one flat dataclass, serialized as flat JSON.

The JSON key for the D-SSIM weight is ``lambda`` (a Python keyword), stored
on the dataclass as ``lambda_``. Every other key matches its field name.
Unknown keys in a config file are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .core import ConfigError

_JSON_ALIASES = {"lambda": "lambda_"}
_FIELD_ALIASES = {v: k for k, v in _JSON_ALIASES.items()}


@dataclass
class TrainConfig:
    # loss weights
    lambda_: float = 0.2            # D-SSIM weight inside the photometric form
    gamma: float = 1.0              # cross-model regularization weight

    # pseudo-view buffers and perturbation cadence
    num_buffers: int = 24           # M pseudo views / image buffers
    buffer_size: int = 3            # S frames per ring buffer
    perturb_interval: int = 500
    buffer_push_interval: int = 100

    # noise schedule
    omega_start: float = 0.08
    omega_end: float = 0.02
    decay_shape: str = "log"        # "log" or "linear"

    # uncertainty thresholding and smoothing
    ratio_r: float = 0.05
    theta_min: float = 0.01
    kernel_k: int = 5

    # schedule
    total_iters: int = 10_000
    seed: int = 0
    eval_interval: int = 100

    # optimizer
    lr_mu: float = 2e-4
    lr_mu_final: float = 2e-6       # exponential decay target; 0 disables decay
    lr_rot: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 2.5e-2
    lr_sh: float = 2.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # density control
    densify_interval: int = 100
    densify_start: int = 300
    densify_stop_frac: float = 0.6
    densify_grad_threshold: float = 2e-4
    densify_percent_dense: float = 0.01
    split_factor: float = 1.6
    prune_opacity: float = 0.005
    max_gaussians: int = 4000

    # co-pruning (density-control cadence)
    co_prune: bool = True
    co_prune_threshold: float = 0.0  # 0 -> 2x median nearest-neighbor spacing at init

    # pseudo-view sampling
    beta_min: float = 0.3
    beta_max: float = 0.7
    resample_interval: int = 0      # 0 -> pseudo views fixed for the whole run

    # perturbation
    perturb_strategy: str = "uncertainty"  # none | random | gradient | uncertainty
    flag_mode: str = "or"                  # aggregate flags across views: "or"|"and"
    perturb_positions: bool = True
    perturb_rotations: bool = True
    perturb_scales: bool = True
    perturb_opacities: bool = True
    perturb_detached: bool = False  # perturb a detached snapshot instead of in place
    stop_grad_delta: bool = False   # regularization updates the ensemble model only

    # rendering
    background: tuple = (0.0, 0.0, 0.0)

    def validate(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if not 0.0 < self.ratio_r <= 1.0:
            raise ConfigError("ratio_r must lie in (0, 1]")
        if self.buffer_size < 2:
            raise ConfigError("buffer_size must be at least 2")
        if self.kernel_k < 1 or self.kernel_k % 2 == 0:
            raise ConfigError("kernel_k must be odd and positive")
        if not self.omega_start >= self.omega_end > 0:
            raise ConfigError("omega schedule needs omega_start >= omega_end > 0")
        if self.decay_shape not in ("log", "linear"):
            raise ConfigError("decay_shape must be 'log' or 'linear'")
        if self.total_iters < 1:
            raise ConfigError("total_iters must be positive")
        for name in ("perturb_interval", "buffer_push_interval", "densify_interval",
                     "eval_interval", "num_buffers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.beta_min <= self.beta_max <= 1.0:
            raise ConfigError("beta range must satisfy 0 <= beta_min <= beta_max <= 1")
        if self.perturb_strategy not in ("none", "random", "gradient", "uncertainty"):
            raise ConfigError(f"unknown perturb_strategy {self.perturb_strategy!r}")
        if self.flag_mode not in ("or", "and"):
            raise ConfigError("flag_mode must be 'or' or 'and'")
        if len(self.background) != 3 or any(not 0.0 <= float(v) <= 1.0 for v in self.background):
            raise ConfigError("background must be three values in [0, 1]")
        if self.theta_min < 0:
            raise ConfigError("theta_min must be non-negative")
        return self

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            key = _FIELD_ALIASES.get(f.name, f.name)
            value = getattr(self, f.name)
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        unknown = []
        for key, value in data.items():
            name = _JSON_ALIASES.get(key, key)
            if name not in known or (key != name and name in data):
                unknown.append(key)
                continue
            if name == "background":
                value = tuple(float(v) for v in value)
            kwargs[name] = value
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be a flat object")
        return cls.from_dict(data)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
