"""Approximate dynamics used by the tracking controller.

Two models share one interface:

* :class:`AnalyticModel` wraps an environment's own step function and
  linearizes it (first-order-hold Jacobians for the car, central differences
  of the discrete step otherwise).
* :class:`TvLinearModel` holds per-timestep affine maps
  ``s' = A_t s + B_t a + c_t`` fit by regression on perturbed rollouts.

Both expose ``step(s, a, t)``, ``rollout(s0, actions, t0)`` and
``jacobians(states, actions, t0)`` so the controller never needs to know
which one it has.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import serialize
from .dynamics import (
    ContractError,
    LinearizedStep,
    Trajectory,
    car_jacobians_batch,
    numerical_jacobians,
)

log = logging.getLogger(__name__)

# regularized condition number targeted once a step is flagged rank deficient
_FLAGGED_CONDITION = 1e4


class AnalyticModel:
    """``f_hat`` = the source step itself; only the Jacobians are approximate."""

    is_linear = False
    kind = "analytic"

    def __init__(self, env, horizon: int | None = None):
        self.env = env
        self.horizon = env.horizon if horizon is None else horizon
        self._gains = np.asarray(getattr(env, "gains", ()), dtype=float)

    @property
    def state_dim(self) -> int:
        return self.env.state_dim

    @property
    def action_dim(self) -> int:
        return self.env.action_dim

    def step(self, s, a, t: int = 0) -> np.ndarray:
        return self.env.step(s, a)

    def rollout(self, s0, actions, t0: int = 0) -> np.ndarray:
        return self.env.rollout(s0, actions)

    def jacobians(self, states, actions, t0: int = 0):
        """Discrete ``(A_k, B_k)`` at each ``(states[k], actions[k])``."""
        H = len(actions)
        if self.env.name == "car":
            return car_jacobians_batch(np.asarray(states)[:H], self._gains, self.env.dt)
        n, m = self.state_dim, self.action_dim
        A = np.empty((H, n, n))
        B = np.empty((H, n, m))
        for k in range(H):
            A[k], B[k] = numerical_jacobians(lambda x, u: self.env.step(x, u), states[k], actions[k])
        return A, B


@dataclass
class FitMetadata:
    rollouts: int
    perturbation: float
    state_perturbation: float
    ridge: np.ndarray  # final ridge per timestep
    residual_rms: np.ndarray  # per-timestep RMS one-step fit residual
    rank_deficient: np.ndarray  # per-timestep flag


@dataclass
class TvLinearModel:
    """Per-timestep affine dynamics; ``A (T, n, n)``, ``B (T, n, m)``, ``c (T, n)``."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    meta: FitMetadata | None = None
    is_linear: bool = field(default=True, init=False)
    kind: str = field(default="tv-linear", init=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        T, n, _ = self.A.shape
        if self.A.shape != (T, n, n) or self.B.shape[:2] != (T, n) or self.c.shape != (T, n):
            raise ContractError("inconsistent time-varying model shapes")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B)) and np.all(np.isfinite(self.c))):
            raise ContractError("time-varying model has non-finite entries")

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A.shape[1]

    @property
    def action_dim(self) -> int:
        return self.B.shape[2]

    def _check_t(self, t):
        if not 0 <= t < self.horizon:
            raise ContractError(f"time index {t} outside [0, {self.horizon - 1}]")

    def step(self, s, a, t: int = 0) -> np.ndarray:
        self._check_t(t)
        return self.A[t] @ s + self.B[t] @ a + self.c[t]

    def rollout(self, s0, actions, t0: int = 0) -> np.ndarray:
        out = np.empty((len(actions) + 1, self.state_dim))
        out[0] = s0
        for k, a in enumerate(actions):
            out[k + 1] = self.step(out[k], a, t0 + k)
        return out

    def jacobians(self, states, actions, t0: int = 0):
        H = len(actions)
        self._check_t(t0 + H - 1)
        return self.A[t0 : t0 + H], self.B[t0 : t0 + H]

    def save(self, path) -> None:
        header = {"horizon": self.horizon, "state_dim": self.state_dim, "action_dim": self.action_dim}
        arrays = {"A": self.A, "B": self.B, "c": self.c}
        if self.meta is not None:
            header.update(rollouts=self.meta.rollouts, perturbation=self.meta.perturbation,
                          state_perturbation=self.meta.state_perturbation)
            arrays.update(ridge=self.meta.ridge, residual_rms=self.meta.residual_rms,
                          rank_deficient=self.meta.rank_deficient.astype(float))
        serialize.write(path, "tvlinear", header, arrays)

    @classmethod
    def load(cls, path) -> "TvLinearModel":
        header, arrays = serialize.read(path, "tvlinear")
        meta = None
        if "ridge" in arrays:
            meta = FitMetadata(header["rollouts"], header["perturbation"], header["state_perturbation"],
                               arrays["ridge"], arrays["residual_rms"], arrays["rank_deficient"] > 0.5)
        return cls(arrays["A"], arrays["B"], arrays["c"], meta)


def linearize_at(model, s, a, t: int) -> LinearizedStep:
    """Affine model of one step at ``(s, a)``: ``c = f_hat(s, a) - A s - B a``."""
    horizon = getattr(model, "horizon", None)
    if t < 0 or (horizon is not None and t >= horizon):
        raise ContractError(f"time index {t} out of range")
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    A, B = model.jacobians(s[None, :], a[None, :], t)
    A, B = A[0], B[0]
    return LinearizedStep(A, B, model.step(s, a, t) - A @ s - B @ a)


# ------------------------------------------------------------------ fitting

@dataclass(frozen=True)
class FitConfig:
    rollouts: int = 50
    perturbation: float = 0.05
    state_perturbation: float = 0.01
    ridge: float = 1e-6
    refinements: int = 3
    max_condition: float = 1e10

    def __post_init__(self):
        if self.rollouts < 2:
            raise ContractError("need at least two fitting rollouts")
        if self.perturbation < 0 or self.state_perturbation < 0 or self.ridge <= 0:
            raise ContractError("perturbation scales must be non-negative and ridge positive")


def _ridge_fit(X, Y, ridge, refinements):
    """Iterated Tikhonov: each refinement re-solves for the residual, which
    drives the ridge bias towards zero while keeping every solve regular."""
    G = X.T @ X
    lam = ridge * max(1.0, float(np.trace(G)) / G.shape[0])
    L = np.linalg.cholesky(G + lam * np.eye(G.shape[0]))

    def solve(rhs):
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))

    W = solve(X.T @ Y)
    for _ in range(refinements):
        W = W + solve(X.T @ (Y - X @ W))
    return W


def perturbed_rollouts(env, nominal: Trajectory, cfg: FitConfig, rng: np.random.Generator):
    """Open-loop rollouts of the nominal actions with Gaussian perturbations on
    the actions and on the initial state. Returns states ``(M, T+1, n)`` and
    actions ``(M, T, m)``."""
    T = nominal.horizon
    M = cfg.rollouts
    actions = nominal.actions[None] + cfg.perturbation * rng.standard_normal((M, T, env.action_dim))
    starts = nominal.states[0][None] + cfg.state_perturbation * rng.standard_normal((M, env.state_dim))
    states = np.stack([env.rollout(starts[i], actions[i]) for i in range(M)])
    return states, actions


def fit_tv_linear(env, nominal: Trajectory, cfg: FitConfig | None = None,
                  rng: np.random.Generator | None = None) -> TvLinearModel:
    """Per-timestep regression of ``s_{t+1}`` on ``(s_t, a_t, 1)``.

    Data are centred on the nominal trajectory before regressing, which keeps
    the normal equations well conditioned. When they are still close to
    singular the step is flagged and the ridge grows by decades until the
    regularized system is comfortably conditioned.
    """
    cfg = cfg or FitConfig()
    rng = rng or np.random.default_rng(0)
    states, actions = perturbed_rollouts(env, nominal, cfg, rng)
    T, n, m = nominal.horizon, env.state_dim, env.action_dim
    A = np.empty((T, n, n))
    B = np.empty((T, n, m))
    c = np.empty((T, n))
    ridges = np.empty(T)
    rms = np.empty(T)
    flags = np.zeros(T, dtype=bool)
    M = states.shape[0]
    for t in range(T):
        ds = states[:, t] - nominal.states[t]
        da = actions[:, t] - nominal.actions[t]
        X = np.column_stack([ds, da, np.ones(M)])
        Y = states[:, t + 1] - nominal.states[t + 1]
        ridge = cfg.ridge
        G = X.T @ X
        scale = max(1.0, float(np.trace(G)) / G.shape[0])
        if np.linalg.cond(G) > cfg.max_condition:
            flags[t] = True
            while np.linalg.cond(G + ridge * scale * np.eye(G.shape[0])) > _FLAGGED_CONDITION and ridge < 1.0:
                ridge *= 10.0
        if flags[t]:
            log.warning("rank-deficient regression at t=%d; ridge raised to %.1e", t, ridge)
        W = _ridge_fit(X, Y, ridge, 0 if flags[t] else cfg.refinements)
        A[t], B[t] = W[:n].T, W[n : n + m].T
        c[t] = W[n + m] + nominal.states[t + 1] - A[t] @ nominal.states[t] - B[t] @ nominal.actions[t]
        rms[t] = float(np.sqrt(np.mean((Y - X @ W) ** 2)))
        ridges[t] = ridge
    meta = FitMetadata(cfg.rollouts, cfg.perturbation, cfg.state_perturbation, ridges, rms, flags)
    return TvLinearModel(A, B, c, meta)


def one_step_errors(model, states, actions) -> np.ndarray:
    """Norm of ``s_{t+1} - f_hat_t(s_t, a_t)`` for rollouts ``(M, T+1, n)``."""
    M, T = actions.shape[:2]
    err = np.empty((M, T))
    for i in range(M):
        for t in range(T):
            err[i, t] = np.linalg.norm(states[i, t + 1] - model.step(states[i, t], actions[i, t], t))
    return err


# ---------------------------------------------------------- model error probe

@dataclass(frozen=True)
class ModelErrorBound:
    """Outer box of sampled ``f(s, a) - f_hat(s, a)`` and the largest norm."""

    lower: np.ndarray
    upper: np.ndarray
    max_norm: float
    samples: int

    def contains(self, r, tol: float = 0.0) -> bool:
        r = np.asarray(r)
        return bool(np.all(r >= self.lower - tol) and np.all(r <= self.upper + tol))


def probe_model_error(model, env, nominal: Trajectory, samples: int = 1000,
                      rng: np.random.Generator | None = None, state_radius: float = 0.1,
                      action_radius: float = 1.0) -> ModelErrorBound:
    """Sample ``(t, s, a)`` in a box tube around the nominal and record the
    one-step residual between the source and the model."""
    rng = rng or np.random.default_rng(0)
    T = nominal.horizon
    res = np.empty((samples, env.state_dim))
    for i in range(samples):
        t = int(rng.integers(T))
        s = nominal.states[t] + rng.uniform(-state_radius, state_radius, env.state_dim)
        a = env.action_space.clip(nominal.actions[t] + rng.uniform(-action_radius, action_radius, env.action_dim))
        res[i] = env.step(s, a) - model.step(s, a, t)
    return ModelErrorBound(res.min(axis=0), res.max(axis=0),
                           float(np.max(np.linalg.norm(res, axis=1))), samples)


def make_model(kind: str, env, nominal: Trajectory | None = None, cfg: FitConfig | None = None,
               rng: np.random.Generator | None = None):
    if kind == "analytic":
        return AnalyticModel(env)
    if kind == "tv-linear":
        if nominal is None:
            raise ContractError("a tv-linear model is fit around a nominal trajectory")
        return fit_tv_linear(env, nominal, cfg, rng)
    raise ContractError(f"unknown model kind {kind!r}")


__all__ = [
    "AnalyticModel", "FitConfig", "FitMetadata", "ModelErrorBound", "TvLinearModel",
    "fit_tv_linear", "linearize_at", "make_model", "one_step_errors", "perturbed_rollouts",
    "probe_model_error",
]
