"""Source environments: the kinematic car and the two-link planar arm.

An environment bundles the deterministic simulator step, its box spaces,
initial-state distribution and the policy featurization. Environments are
frozen values; parameter-perturbed variants are new instances.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np

from . import _backend
from .dynamics import (
    CAR_ACTION_SPACE,
    ArmParams,
    BoxSpace,
    NumericOverflowError,
    arm_derivative,
    arm_end_effector,
    car_derivative,
    car_jacobians,
    integrate_step,
    numerical_jacobians,
)

NO_HILLS = np.zeros((0, 4))

CAR_STATE_SPACE = BoxSpace(
    np.array([-20.0, -20.0, -8 * np.pi, -10.0, -5.0]),
    np.array([20.0, 20.0, 8 * np.pi, 10.0, 5.0]),
)


def _rk4_batch(fn, s, a, dt):
    k1 = fn(s, a)
    k2 = fn(s + 0.5 * dt * k1, a)
    k3 = fn(s + 0.5 * dt * k2, a)
    k4 = fn(s + dt * k3, a)
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class CarEnv:
    """Five-state kinematic car driving to the origin."""

    name: ClassVar[str] = "car"
    state_dim: ClassVar[int] = 5
    action_dim: ClassVar[int] = 2
    randomization_dim: ClassVar[int] = 5

    dt: float = 0.1
    horizon: int = 100
    action_space: BoxSpace = CAR_ACTION_SPACE
    state_space: BoxSpace = CAR_STATE_SPACE
    start_position: BoxSpace = BoxSpace(np.array([-5.0, -5.0]), np.array([5.0, 5.0]))
    gains: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)

    def derivative(self, s, a):
        return car_derivative(s, a, self.gains)

    def jacobians(self, s, a):
        return car_jacobians(s, a, self.gains)

    def step(self, s, a, hills=NO_HILLS) -> np.ndarray:
        return _backend.car_rk4(s, a, self.dt, np.asarray(self.gains, dtype=float), hills)

    def rollout(self, s0, actions, hills=NO_HILLS) -> np.ndarray:
        return _backend.car_rollout(s0, actions, self.dt, np.asarray(self.gains, dtype=float), hills)

    def step_batch(self, s, a, randomization=None) -> np.ndarray:
        """Vectorized RK4 step; ``randomization`` holds per-row gain vectors."""
        g = np.asarray(self.gains, dtype=float) if randomization is None else randomization

        def f(x, u):
            g0, g1, g2, g3, g4 = (np.asarray(g)[..., i] for i in range(5))
            th = g1 * x[..., 2]
            v = x[..., 3]
            return np.stack(
                [g0 * v * np.cos(th), g0 * v * np.sin(th), g0 * v * g2 * x[..., 4],
                 np.broadcast_to(g3 * u[..., 0], v.shape), np.broadcast_to(g4 * u[..., 1], v.shape)],
                axis=-1,
            )

        return _rk4_batch(f, s, a, self.dt)

    def with_gains(self, gains) -> "CarEnv":
        return replace(self, gains=tuple(float(x) for x in gains))

    def with_param_scale(self, gamma: float) -> "CarEnv":
        """Scale the curvature-rate control: ``dkappa/dt = gamma * a_kappa``."""
        g = list(self.gains)
        g[4] *= gamma
        return self.with_gains(g)

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        pos = self.start_position.sample(rng)
        heading = rng.uniform(-np.pi, np.pi)
        return np.array([pos[0], pos[1], heading, 0.0, 0.0])

    def discrete_input_matrix(self, s=None) -> np.ndarray:
        _, B = car_jacobians(np.zeros(5), np.zeros(2), self.gains)
        return self.dt * B

    def features(self, s) -> np.ndarray:
        """Scaled ``[x, y, cos th, sin th, v, kappa, x_b, y_b, d, cos b, sin b]``:
        ``(x_b, y_b)`` is the origin in the vehicle frame, ``d`` its distance
        and ``b`` its bearing."""
        s = np.asarray(s, dtype=float)
        x, y, th = s[..., 0], s[..., 1], s[..., 2]
        c, sn = np.cos(th), np.sin(th)
        xb = -(x * c + y * sn)
        yb = x * sn - y * c
        d = np.hypot(xb, yb)
        bearing = np.arctan2(yb, xb)
        return np.stack(
            [0.2 * x, 0.2 * y, c, sn, 0.5 * s[..., 3], s[..., 4], 0.2 * xb, 0.2 * yb, 0.2 * d,
             np.cos(bearing), np.sin(bearing)],
            axis=-1,
        )

    @property
    def feature_dim(self) -> int:
        return 11

    def tracked_point(self, s) -> np.ndarray:
        return np.asarray(s)[..., :2]


@dataclass(frozen=True)
class ArmEnv:
    """Two-link planar arm reaching a fixed goal from a fixed start."""

    name: ClassVar[str] = "arm"
    state_dim: ClassVar[int] = 4
    action_dim: ClassVar[int] = 2
    randomization_dim: ClassVar[int] = 1

    dt: float = 0.01
    horizon: int = 50
    params: ArmParams = field(default_factory=ArmParams)
    action_space: BoxSpace = BoxSpace(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    state_space: BoxSpace = BoxSpace(
        np.array([-2 * np.pi, -2 * np.pi, -60.0, -60.0]), np.array([2 * np.pi, 2 * np.pi, 60.0, 60.0])
    )
    start: tuple = (0.3, 1.2, 0.0, 0.0)
    goal: tuple = (0.02, 0.17)

    def derivative(self, s, a):
        return arm_derivative(s, a, self.params)

    def jacobians(self, s, a):
        return numerical_jacobians(self.derivative, s, a)

    def step(self, s, a, hills=NO_HILLS) -> np.ndarray:
        if len(hills):
            raise ValueError("the arm environment has no hill disturbance")
        return integrate_step(self.derivative, s, a, self.dt)

    def rollout(self, s0, actions, hills=NO_HILLS) -> np.ndarray:
        out = np.empty((len(actions) + 1, self.state_dim))
        out[0] = s0
        for k, a in enumerate(actions):
            out[k + 1] = self.step(out[k], a, hills)
        return out

    def step_batch(self, s, a, randomization=None) -> np.ndarray:
        scale = 1.0 if randomization is None else np.asarray(randomization)[..., 0]
        out = _rk4_batch(lambda x, u: arm_derivative(x, u, self.params, scale), s, a, self.dt)
        return out

    def with_param_scale(self, gamma: float) -> "ArmEnv":
        """Scale both link masses by ``gamma``."""
        return replace(self, params=self.params.scaled_mass(gamma))

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array(self.start, dtype=float)

    def discrete_input_matrix(self, s=None) -> np.ndarray:
        s = np.array(self.start, dtype=float) if s is None else s
        _, B = numerical_jacobians(lambda x, u: self.step(x, u), s, np.zeros(2))
        return B

    def end_effector(self, s) -> np.ndarray:
        return arm_end_effector(s, self.params)

    def features(self, s) -> np.ndarray:
        """``[sin q, cos q, dq, goal, ee - goal]`` with lengths in decimetres."""
        s = np.asarray(s, dtype=float)
        q, dq = s[..., :2], s[..., 2:]
        goal = np.broadcast_to(np.asarray(self.goal), q.shape)
        ee = arm_end_effector(s, self.params)
        return np.concatenate(
            [np.sin(q), np.cos(q), 0.1 * dq, 10.0 * goal, 10.0 * (ee - goal)], axis=-1
        )

    @property
    def feature_dim(self) -> int:
        return 10

    def tracked_point(self, s) -> np.ndarray:
        return self.end_effector(s)


def make_env(name: str, **kwargs):
    if name == "car":
        return CarEnv(**kwargs)
    if name == "arm":
        return ArmEnv(**kwargs)
    raise ValueError(f"unknown environment {name!r}")


def check_finite(s, step: int):
    if not np.all(np.isfinite(s)):
        raise NumericOverflowError(f"non-finite state at step {step}")
