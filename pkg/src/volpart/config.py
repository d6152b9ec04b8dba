"""Run configuration: defaults, config file, CLI flag precedence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .pipeline import PipelineParams


@dataclass
class RunConfig:
    w_p: float = 0.1
    k_ic: float = 5.0
    alpha: float = 0.85
    lam: float = 1000.0
    eps: float = 0.02
    max_iter: int = 30
    conv: float = 1e-5
    split_alpha: float = 0.1
    gamma: float = 0.15
    pair_budget: int = 10
    sphere_res: int = 4096
    omega_multiplier: float = 3.0
    omega_scale: dict = field(default_factory=dict)
    merge: dict = field(default_factory=dict)
    dump_iterations: bool = False
    exact_oracle: bool = False
    full_pairs: bool = False
    workers: int = 1

    def validate(self):
        positive = ["w_p", "k_ic", "alpha", "lam", "max_iter", "conv",
                    "split_alpha", "gamma", "pair_budget", "sphere_res",
                    "omega_multiplier"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.eps < 1.0):
            raise ValueError("eps must lie in (0, 1)")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        for k, v in self.omega_scale.items():
            if v <= 0:
                raise ValueError(f"omega scale for attribute {k} must be "
                                 "positive")
        return self

    def pipeline_params(self) -> PipelineParams:
        return PipelineParams(
            w_p=self.w_p, k_ic=self.k_ic, alpha=self.alpha, lam=self.lam,
            eps=self.eps, max_iter=self.max_iter, conv=self.conv,
            split_alpha=self.split_alpha, gamma=self.gamma,
            pair_budget=self.pair_budget, sphere_res=self.sphere_res,
            omega_multiplier=self.omega_multiplier,
            omega_scale=dict(self.omega_scale),
            merge=dict(self.merge),
            full_pairs=self.full_pairs,
            dump_iterations=self.dump_iterations)


def load_config_file(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return data


def build_config(file_path=None, overrides=None) -> RunConfig:
    """Defaults < config file < explicit overrides (CLI)."""
    data = {}
    if file_path:
        data.update(load_config_file(file_path))
    if overrides:
        for k, v in overrides.items():
            if v is not None:
                data[k] = v
    if "omega_scale" in data:
        data["omega_scale"] = {int(k): float(v)
                               for k, v in dict(data["omega_scale"]).items()}
    if "merge" in data:
        data["merge"] = {int(k): (v if v == "all" else [int(x) for x in v])
                         for k, v in dict(data["merge"]).items()}
    return RunConfig(**data).validate()
