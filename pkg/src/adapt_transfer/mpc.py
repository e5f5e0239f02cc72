"""Tracking MPC around a nominal trajectory by iterative relinearization.

Each relinearization solves a time-varying LQR in deviation coordinates
(exactly, by a backward recursion) and moves the iterate with a halving line
search on the cost evaluated through the approximate model. Iterate actions
are clamped onto the action box; the clamp is reported, not hidden.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .dynamics import BoxSpace, ContractError, Trajectory


class ControllerError(FloatingPointError):
    """The relinearization iterate became non-finite."""


@dataclass(frozen=True)
class MpcConfig:
    horizon: int
    q_diag: tuple
    r_diag: tuple
    action_space: BoxSpace
    max_iterations: int = 10
    tolerance: float = 1e-6
    line_search_steps: int = 5

    def __post_init__(self):
        q = np.asarray(self.q_diag, dtype=float)
        r = np.asarray(self.r_diag, dtype=float)
        if self.horizon < 1:
            raise ContractError("MPC horizon must be at least 1")
        if np.any(q < 0) or np.any(r <= 0):
            raise ContractError("Q must be positive semidefinite and R positive definite")
        if r.shape != (self.action_space.dim,):
            raise ContractError("R diagonal must match the action dimension")
        if self.max_iterations < 1:
            raise ContractError("need at least one relinearization iteration")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.asarray(self.q_diag, dtype=float))

    @property
    def R(self) -> np.ndarray:
        return np.diag(np.asarray(self.r_diag, dtype=float))

    @property
    def q_min(self) -> float:
        q = np.asarray(self.q_diag, dtype=float)
        return float(q[q > 0].min())

    @property
    def r_min(self) -> float:
        return float(np.min(self.r_diag))

    @property
    def tracked(self) -> np.ndarray:
        """Indices of state coordinates with a positive weight."""
        return np.flatnonzero(np.asarray(self.q_diag) > 0)


def default_mpc_config(env, horizon: int | None = None) -> MpcConfig:
    if env.name == "car":
        q, r = (1.0, 1.0, 0.0, 0.0, 0.0), 1e-3
    else:
        # the arm's action weight matches the control weight of its task cost
        q, r = (1.0, 1.0, 1e-3, 1e-3), 1e-2
    return MpcConfig(horizon or 20, q, (r,) * env.action_dim, env.action_space)


@dataclass
class MpcSolution:
    action: np.ndarray
    planned_actions: np.ndarray
    planned_states: np.ndarray
    cost: float
    iterations: int
    converged: bool
    saturated: bool
    cost_history: list = field(default_factory=list)


def solve_tracking_lqr(A, B, Q, R, ds0, s_off=None, a_off=None, resid=None):
    """Minimize ``sum_{k=0}^{H} |ds_k + s_off_k|_Q^2 + sum_{k<H} |da_k + a_off_k|_R^2``
    subject to ``ds_{k+1} = A_k ds_k + B_k da_k + resid_k`` with ``ds_0`` fixed.

    Returns ``(da (H, m), ds (H+1, n), cost)``. Box constraints are ignored.
    """
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    H, n, m = B.shape
    if A.shape != (H, n, n) or H < 1:
        raise ContractError("need H >= 1 and A of shape (H, n, n) matching B")
    s_off = np.zeros((H + 1, n)) if s_off is None else np.ascontiguousarray(s_off, dtype=float)
    a_off = np.zeros((H, m)) if a_off is None else np.ascontiguousarray(a_off, dtype=float)
    resid = np.zeros((H, n)) if resid is None else np.ascontiguousarray(resid, dtype=float)
    Q = np.ascontiguousarray(Q, dtype=float)
    R = np.ascontiguousarray(R, dtype=float)
    ds0 = np.ascontiguousarray(ds0, dtype=float)
    if s_off.shape != (H + 1, n) or a_off.shape != (H, m) or resid.shape != (H, n):
        raise ContractError("offset shapes do not match the horizon")
    return _backend.lqr_solve(A, B, Q, R, ds0, s_off, a_off, resid)


def _tracking_cost(states, actions, s_ref, a_ref, q, r) -> float:
    es = states - s_ref
    ea = actions - a_ref
    return float(np.sum(es * es * q) + np.sum(ea * ea * r))


def aux_mpc(s, t: int, nominal: Trajectory, model, cfg: MpcConfig) -> MpcSolution:
    """One receding-horizon solve from state ``s`` at time ``t``.

    The iterate starts at the nominal segment. Each iteration linearizes the
    model along the iterate, solves the tracking LQR from the actual
    deviation ``s - s_hat_t``, and accepts the longest of the steps
    ``1, 1/2, ...`` that does not raise the cost of the model rollout from
    ``s``. The accepted actions are clamped and the new iterate is their model
    rollout, so the iterate is always dynamically consistent after the first
    pass. Returned cost is that of the final iterate.
    """
    T = nominal.horizon
    if not 0 <= t < T:
        raise ContractError(f"time index {t} outside [0, {T - 1}]")
    s = np.asarray(s, dtype=float)
    H = min(cfg.horizon, T - t)
    s_ref = nominal.states[t : t + H + 1]
    a_ref = nominal.actions[t : t + H]
    q = np.asarray(cfg.q_diag, dtype=float)
    r = np.asarray(cfg.r_diag, dtype=float)
    Q, R = cfg.Q, cfg.R
    box = cfg.action_space

    a_hat = box.clip(a_ref)
    saturated = bool(np.any(a_hat != a_ref))
    s_hat = s_ref.copy()
    consistent = False
    cur_states = model.rollout(s, a_hat, t)
    J = _tracking_cost(cur_states, a_hat, s_ref, a_ref, q, r)
    history = [J]
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        A, B = model.jacobians(s_hat, a_hat, t)
        if consistent:
            resid = np.zeros((H, s.shape[0]))
        else:
            resid = np.array([model.step(s_hat[k], a_hat[k], t + k) for k in range(H)]) - s_hat[1:]
        da, _, _ = solve_tracking_lqr(A, B, Q, R, s - s_hat[0], s_hat - s_ref, a_hat - a_ref, resid)
        if not np.all(np.isfinite(da)):
            raise ControllerError(f"non-finite relinearization step at t={t}")
        alpha = 1.0
        accepted = None
        for _ in range(cfg.line_search_steps + 1):
            cand = box.clip(a_hat + alpha * da)
            cand_states = model.rollout(s, cand, t)
            Jc = _tracking_cost(cand_states, cand, s_ref, a_ref, q, r)
            if np.isfinite(Jc) and Jc <= J:
                accepted = (cand, cand_states, Jc, bool(np.any(cand != a_hat + alpha * da)))
                break
            alpha *= 0.5
        if accepted is None:
            change = 0.0
            s_hat = cur_states
        else:
            cand, cand_states, J, clipped = accepted
            change = float(np.max(np.abs(cand - a_hat)))
            saturated = saturated or clipped
            a_hat, s_hat, cur_states = cand, cand_states, cand_states
        history.append(J)
        was_consistent = consistent
        consistent = True
        if model.is_linear or (change <= cfg.tolerance and (was_consistent or accepted is not None)):
            converged = True
            break
    if not np.all(np.isfinite(cur_states)):
        raise ControllerError(f"non-finite planned trajectory at t={t}")
    return MpcSolution(a_hat[0].copy(), a_hat, cur_states, J, it, converged, saturated, history)


def mpc_cost_at(s, t: int, nominal: Trajectory, model, cfg: MpcConfig) -> float:
    """Optimal tracking cost ``C*_N(s, t)`` without stepping the system."""
    return aux_mpc(s, t, nominal, model, cfg).cost
