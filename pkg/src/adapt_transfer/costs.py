"""Per-step cost functions and their Lipschitz constants."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ArmParams, Trajectory, arm_end_effector


@dataclass(frozen=True)
class CarCost:
    """``l(s, a) = x^2 + y^2 + a_v^2 + a_kappa^2`` (weights default to 1)."""

    position_weight: float = 1.0
    action_weight: float = 1.0

    def step_cost(self, s, a) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        return self.position_weight * (s[..., 0] ** 2 + s[..., 1] ** 2) + self.action_weight * (
            a[..., 0] ** 2 + a[..., 1] ** 2
        )

    def lipschitz(self, states, actions) -> float:
        """Bound on the cost-gradient norm over the bounding box of the given
        state/action samples (any number of trajectories, stacked)."""
        s = np.abs(np.asarray(states, dtype=float).reshape(-1, 5))
        a = np.abs(np.asarray(actions, dtype=float).reshape(-1, 2))
        corner = np.concatenate(
            [self.position_weight * s[:, :2].max(axis=0), self.action_weight * a.max(axis=0)]
        )
        return 2.0 * float(np.linalg.norm(corner))


@dataclass(frozen=True)
class ArmCost:
    """``l(s, tau) = |p_ee - goal|^2 + w |tau|^2``."""

    goal: tuple = (0.02, 0.17)
    params: ArmParams = ArmParams()
    control_weight: float = 0.01

    def step_cost(self, s, a) -> np.ndarray:
        ee = arm_end_effector(s, self.params)
        d = ee - np.asarray(self.goal)
        a = np.asarray(a, dtype=float)
        return np.sum(d * d, axis=-1) + self.control_weight * np.sum(a * a, axis=-1)

    def lipschitz(self, states, actions) -> float:
        p = self.params
        reach = p.l1 + p.l2
        jac_norm = np.hypot(reach, p.l2)
        lq = 2.0 * jac_norm * (reach + float(np.linalg.norm(self.goal)))
        a = np.abs(np.asarray(actions, dtype=float).reshape(-1, 2))
        la = 2.0 * self.control_weight * float(np.linalg.norm(a.max(axis=0)))
        return float(np.hypot(lq, la))


def make_cost(env):
    if env.name == "car":
        return CarCost()
    return ArmCost(goal=tuple(env.goal), params=env.params)


def step_costs(traj: Trajectory, cost) -> np.ndarray:
    return cost.step_cost(traj.states[:-1], traj.actions)


def episode_cost(traj: Trajectory, cost) -> float:
    """Sum of per-step costs ``l(s_t, a_t)`` for t = 0..T-1."""
    if traj.horizon == 0:
        return 0.0
    return float(np.sum(step_costs(traj, cost)))
