"""Experiment configuration: a YAML document validated by pydantic.

Unknown keys are rejected. Every field left out is filled with the
environment's default when the document is loaded, so the echo written next
to the results states exactly what ran and parses back to an equal config.
"""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dynamics import ArmParams, BoxSpace, ConfigurationError
from .envs import ArmEnv, CarEnv
from .harness import ARM_DISTURBANCES, CAR_DISTURBANCES, DisturbanceSpec
from .models import FitConfig
from .mpc import MpcConfig
from .policy import TrainConfig, bound_set


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class TrainBlock(_Block):
    population: Optional[int] = Field(default=None, ge=10)
    elite_fraction: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    iterations: Optional[int] = Field(default=None, ge=1)
    rollouts: Optional[int] = Field(default=None, ge=1)
    init_std: Optional[float] = Field(default=None, gt=0.0)
    output_std: Optional[float] = Field(default=None, gt=0.0)
    min_std: Optional[float] = Field(default=None, gt=0.0)
    std_shrink: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    randomization_std: Optional[list[float]] = None
    margin: Optional[float] = Field(default=None, ge=0.0, lt=0.5)
    seed: Optional[int] = None


class ModelBlock(_Block):
    kind: Optional[Literal["analytic", "tv-linear"]] = None
    rollouts: Optional[int] = Field(default=None, ge=2)
    perturbation: Optional[float] = Field(default=None, ge=0.0)
    state_perturbation: Optional[float] = Field(default=None, ge=0.0)
    ridge: Optional[float] = Field(default=None, gt=0.0)


class MpcBlock(_Block):
    horizon: Optional[int] = Field(default=None, ge=1)
    q_diag: Optional[list[float]] = None
    r_diag: Optional[list[float]] = None
    max_iterations: Optional[int] = Field(default=None, ge=1)
    tolerance: Optional[float] = Field(default=None, gt=0.0)
    line_search_steps: Optional[int] = Field(default=None, ge=0)


class DisturbanceBlock(_Block):
    active: Optional[list[str]] = None
    control_lower: Optional[list[float]] = None
    control_upper: Optional[list[float]] = None
    process_half_width: Optional[list[float]] = None
    gamma: Optional[float] = Field(default=None, gt=0.0)
    hill_count: Optional[int] = Field(default=None, ge=0)
    hill_workspace: Optional[list[float]] = None
    hill_radius: Optional[list[float]] = None
    hill_height: Optional[list[float]] = None


class SweepBlock(_Block):
    control_scales: Optional[list[float]] = None
    gammas: Optional[list[float]] = None
    hills: Optional[bool] = None
    episodes: Optional[int] = Field(default=None, ge=1)


class TrendBlock(_Block):
    scales: Optional[list[float]] = None
    episodes: Optional[int] = Field(default=None, ge=1)


DEFAULTS = {
    "car": {
        "dt": 0.1,
        "horizon": 100,
        "action_lower": [-2.0, -0.5],
        "action_upper": [2.0, 0.5],
        "state_lower": [-20.0, -20.0, -8 * np.pi, -10.0, -5.0],
        "state_upper": [20.0, 20.0, 8 * np.pi, 10.0, 5.0],
        "train": dict(population=64, elite_fraction=0.125, iterations=250, rollouts=64, init_std=0.05,
                      output_std=0.2, min_std=0.002, std_shrink=0.7, randomization_std=[], margin=0.1, seed=0),
        "model": dict(kind="analytic", rollouts=50, perturbation=0.05, state_perturbation=0.01, ridge=1e-6),
        "mpc": dict(horizon=20, q_diag=[1.0, 1.0, 0.0, 0.0, 0.0], r_diag=[1e-3, 1e-3], max_iterations=10,
                    tolerance=1e-6, line_search_steps=5),
        "disturbances": dict(active=list(CAR_DISTURBANCES), control_lower=[0.3, 0.06],
                             control_upper=[1.5, 0.36], process_half_width=[0.01] * 5, gamma=0.5,
                             hill_count=20, hill_workspace=[-6.0, -6.0, 6.0, 6.0], hill_radius=[1.5, 3.0],
                             hill_height=[0.05, 0.15]),
        "sweep": dict(control_scales=[0.0, 0.5, 1.0], gammas=[0.5, 1.0, 2.0], hills=True, episodes=10),
        "trend": dict(scales=[0.0, 0.5, 1.0, 2.0], episodes=50),
    },
    "arm": {
        "dt": 0.01,
        "horizon": 50,
        "action_lower": [-1.0, -1.0],
        "action_upper": [1.0, 1.0],
        "state_lower": [-2 * np.pi, -2 * np.pi, -60.0, -60.0],
        "state_upper": [2 * np.pi, 2 * np.pi, 60.0, 60.0],
        "train": dict(population=64, elite_fraction=0.125, iterations=150, rollouts=1, init_std=0.05,
                      output_std=0.2, min_std=0.002, std_shrink=0.7, randomization_std=[], margin=0.0, seed=0),
        "model": dict(kind="tv-linear", rollouts=50, perturbation=0.05, state_perturbation=0.01, ridge=1e-6),
        "mpc": dict(horizon=20, q_diag=[1.0, 1.0, 1e-3, 1e-3], r_diag=[1e-2, 1e-2], max_iterations=10,
                    tolerance=1e-6, line_search_steps=5),
        "disturbances": dict(active=list(ARM_DISTURBANCES), control_lower=[0.02, 0.02],
                             control_upper=[0.1, 0.1], process_half_width=[0.001, 0.001, 0.01, 0.01],
                             gamma=2.0, hill_count=0, hill_workspace=[-1.0, -1.0, 1.0, 1.0],
                             hill_radius=[0.5, 2.0], hill_height=[0.05, 0.3]),
        "sweep": dict(control_scales=[0.0, 0.5, 1.0], gammas=[0.5, 1.0, 2.0], hills=False, episodes=10),
        "trend": dict(scales=[0.0, 0.5, 1.0, 2.0], episodes=50),
    },
}


class ExperimentConfig(_Block):
    environment: Literal["car", "arm"]
    dt: Optional[float] = Field(default=None, gt=0.0)
    horizon: Optional[int] = Field(default=None, ge=1)
    action_lower: Optional[list[float]] = None
    action_upper: Optional[list[float]] = None
    state_lower: Optional[list[float]] = None
    state_upper: Optional[list[float]] = None
    train: TrainBlock = Field(default_factory=TrainBlock)
    model: ModelBlock = Field(default_factory=ModelBlock)
    mpc: MpcBlock = Field(default_factory=MpcBlock)
    disturbances: DisturbanceBlock = Field(default_factory=DisturbanceBlock)
    sweep: SweepBlock = Field(default_factory=SweepBlock)
    trend: TrendBlock = Field(default_factory=TrendBlock)
    episodes: int = Field(default=50, ge=1)
    seed: int = 0
    output_dir: str = "results"

    @model_validator(mode="after")
    def _fill_defaults(self):
        d = DEFAULTS[self.environment]
        for key in ("dt", "horizon", "action_lower", "action_upper", "state_lower", "state_upper"):
            if getattr(self, key) is None:
                object.__setattr__(self, key, d[key])
        for block in ("train", "model", "mpc", "disturbances", "sweep", "trend"):
            sub = getattr(self, block)
            for key, value in d[block].items():
                if getattr(sub, key) is None:
                    object.__setattr__(sub, key, value)
        n = 5 if self.environment == "car" else 4
        checks = [
            (len(self.action_lower) == 2 == len(self.action_upper), "action bounds need 2 entries"),
            (len(self.state_lower) == n == len(self.state_upper), f"state bounds need {n} entries"),
            (len(self.mpc.q_diag) == n, f"mpc.q_diag needs {n} entries"),
            (len(self.mpc.r_diag) == 2, "mpc.r_diag needs 2 entries"),
            (len(self.disturbances.process_half_width) == n,
             f"disturbances.process_half_width needs {n} entries"),
            (len(self.disturbances.control_lower) == 2 == len(self.disturbances.control_upper),
             "disturbances.control bounds need 2 entries"),
        ]
        allowed = CAR_DISTURBANCES if self.environment == "car" else ARM_DISTURBANCES
        checks.append((set(self.disturbances.active) <= set(allowed),
                       f"disturbances.active must be a subset of {list(allowed)}"))
        rand = self.train.randomization_std
        k = 5 if self.environment == "car" else 1
        checks.append((not rand or len(rand) == k, f"train.randomization_std needs {k} entries"))
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        return self


def load_config(path) -> ExperimentConfig:
    """Parse and validate; any problem becomes a :class:`ConfigurationError`
    whose message names the offending field path."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config document must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(lines)) from exc


def echo(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(echo(cfg).encode()).hexdigest()


# ------------------------------------------------------------- builders

def build_env(cfg: ExperimentConfig):
    action = BoxSpace(np.array(cfg.action_lower), np.array(cfg.action_upper))
    state = BoxSpace(np.array(cfg.state_lower), np.array(cfg.state_upper))
    if cfg.environment == "car":
        return CarEnv(dt=cfg.dt, horizon=cfg.horizon, action_space=action, state_space=state)
    return ArmEnv(dt=cfg.dt, horizon=cfg.horizon, params=ArmParams(), action_space=action, state_space=state)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(population=t.population, elite_fraction=t.elite_fraction, iterations=t.iterations,
                       rollouts=t.rollouts, init_std=t.init_std, output_std=t.output_std, min_std=t.min_std,
                       std_shrink=t.std_shrink,
                       randomization_std=tuple(t.randomization_std), seed=t.seed)


def restricted_sets(cfg: ExperimentConfig, env):
    return bound_set(env.state_space, env.action_space, cfg.train.margin)


def fit_config(cfg: ExperimentConfig) -> FitConfig:
    m = cfg.model
    return FitConfig(rollouts=m.rollouts, perturbation=m.perturbation,
                     state_perturbation=m.state_perturbation, ridge=m.ridge)


def mpc_config(cfg: ExperimentConfig, env) -> MpcConfig:
    m = cfg.mpc
    return MpcConfig(m.horizon, tuple(m.q_diag), tuple(m.r_diag), env.action_space, m.max_iterations,
                     m.tolerance, m.line_search_steps)


def disturbance_spec(cfg: ExperimentConfig) -> DisturbanceSpec:
    d = cfg.disturbances
    return DisturbanceSpec(active=tuple(d.active), control_lower=tuple(d.control_lower),
                           control_upper=tuple(d.control_upper),
                           process_half_width=tuple(d.process_half_width), gamma=d.gamma,
                           hill_count=d.hill_count, hill_workspace=tuple(d.hill_workspace),
                           hill_radius=tuple(d.hill_radius), hill_height=tuple(d.hill_height))
