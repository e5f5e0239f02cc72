"""Continuous-time dynamics for the kinematic car and the two-link arm,
numeric integration, Jacobians and box spaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CAR_STATE_DIM = 5
CAR_ACTION_DIM = 2
ARM_STATE_DIM = 4
ARM_ACTION_DIM = 2


class ContractError(ValueError):
    """Input violates a documented shape or domain precondition."""


class NumericOverflowError(FloatingPointError):
    """Integration produced a non-finite state."""


class ConfigurationError(ValueError):
    """Physical parameters are outside their valid range."""


def _check_dim(x, dim, name):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise ContractError(f"{name} must have trailing dimension {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class BoxSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, BoxSpace):
            return NotImplemented
        return bool(np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractError("box bounds must be 1-D vectors of equal length")
        if np.any(lo > hi):
            raise ContractError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def shrink(self, margin: float) -> "BoxSpace":
        """Move each finite bound inward by ``margin`` times the box width."""
        if not 0.0 <= margin < 0.5:
            raise ContractError("margin must lie in [0, 0.5)")
        width = self.upper - self.lower
        delta = np.where(np.isfinite(width), margin * width, 0.0)
        return BoxSpace(self.lower + delta, self.upper - delta)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


CAR_ACTION_SPACE = BoxSpace(np.array([-2.0, -0.5]), np.array([2.0, 0.5]))


@dataclass(frozen=True)
class Trajectory:
    """States ``(T+1, n)`` and actions ``(T, m)`` produced at step ``dt``."""

    states: np.ndarray
    actions: np.ndarray
    dt: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        actions = np.asarray(self.actions, dtype=float)
        if states.ndim != 2 or actions.ndim != 2 or states.shape[0] != actions.shape[0] + 1:
            raise ContractError(
                f"trajectory needs T+1 states and T actions, got {states.shape} and {actions.shape}"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


@dataclass(frozen=True)
class LinearizedStep:
    """Discrete affine model ``s' = A s + B a + c``."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray = field(default=None)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ContractError(f"inconsistent linearization shapes {A.shape}, {B.shape}")
        c = np.zeros(n) if self.c is None else np.asarray(self.c, dtype=float)
        if c.shape != (n,):
            raise ContractError(f"affine term must have shape ({n},)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)

    def predict(self, s, a) -> np.ndarray:
        return self.A @ s + self.B @ a + self.c


# --------------------------------------------------------------------- car

def car_derivative(s, a, gains=None) -> np.ndarray:
    """Kinematic car: ``[v cos th, v sin th, v kappa, a_v, a_kappa]``.

    ``gains`` are the five multiplicative parameters used for domain
    randomization (``g0 v cos(g1 th), g0 v sin(g1 th), g0 v g2 kappa,
    g3 a_v, g4 a_kappa``); ``None`` means all ones. Works on batches.
    """
    s = _check_dim(s, CAR_STATE_DIM, "car state")
    a = _check_dim(a, CAR_ACTION_DIM, "car action")
    g = np.ones(5) if gains is None else np.asarray(gains, dtype=float)
    th = s[..., 2] if g[1] == 1.0 else g[1] * s[..., 2]
    v = s[..., 3]
    return np.stack(
        [
            g[0] * v * np.cos(th),
            g[0] * v * np.sin(th),
            g[0] * v * g[2] * s[..., 4],
            g[3] * a[..., 0] * np.ones_like(v),
            g[4] * a[..., 1] * np.ones_like(v),
        ],
        axis=-1,
    )


def car_jacobians(s, a, gains=None) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time Jacobians ``(df/ds, df/da)`` of :func:`car_derivative`."""
    s = _check_dim(s, CAR_STATE_DIM, "car state")
    _check_dim(a, CAR_ACTION_DIM, "car action")
    g = np.ones(5) if gains is None else np.asarray(gains, dtype=float)
    th, v, kappa = s[2], s[3], s[4]
    c, sn = np.cos(g[1] * th), np.sin(g[1] * th)
    A = np.zeros((5, 5))
    A[0, 2] = -g[0] * g[1] * v * sn
    A[0, 3] = g[0] * c
    A[1, 2] = g[0] * g[1] * v * c
    A[1, 3] = g[0] * sn
    A[2, 3] = g[0] * g[2] * kappa
    A[2, 4] = g[0] * g[2] * v
    B = np.zeros((5, 2))
    B[3, 0] = g[3]
    B[4, 1] = g[4]
    return A, B


def car_jacobians_batch(states, gains=None, dt=None):
    """Discrete first-order-hold Jacobians along a state sequence ``(H, 5)``."""
    g = np.ones(5) if gains is None else np.asarray(gains, dtype=float)
    states = np.asarray(states, dtype=float)
    H = states.shape[0]
    th, v, kappa = states[:, 2], states[:, 3], states[:, 4]
    c, sn = np.cos(g[1] * th), np.sin(g[1] * th)
    A = np.zeros((H, 5, 5))
    A[:, 0, 2] = -g[0] * g[1] * v * sn
    A[:, 0, 3] = g[0] * c
    A[:, 1, 2] = g[0] * g[1] * v * c
    A[:, 1, 3] = g[0] * sn
    A[:, 2, 3] = g[0] * g[2] * kappa
    A[:, 2, 4] = g[0] * g[2] * v
    B = np.zeros((H, 5, 2))
    B[:, 3, 0] = g[3]
    B[:, 4, 1] = g[4]
    if dt is not None:
        A *= dt
        A += np.eye(5)
        B *= dt
    return A, B


# --------------------------------------------------------------------- arm

@dataclass(frozen=True)
class ArmParams:
    """Planar two-link arm with uniform rod links and no gravity."""

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 0.1
    l2: float = 0.1
    damping: float = 0.01

    def __post_init__(self):
        if min(self.m1, self.m2, self.l1, self.l2) <= 0:
            raise ConfigurationError("link masses and lengths must be positive")
        if self.damping < 0:
            raise ConfigurationError("damping must be non-negative")

    def scaled_mass(self, gamma: float) -> "ArmParams":
        return ArmParams(self.m1 * gamma, self.m2 * gamma, self.l1, self.l2, self.damping)


def arm_mass_matrix(q2, p: ArmParams) -> np.ndarray:
    q2 = np.asarray(q2, dtype=float)
    lc1, lc2 = 0.5 * p.l1, 0.5 * p.l2
    i1, i2 = p.m1 * p.l1**2 / 12.0, p.m2 * p.l2**2 / 12.0
    c2 = np.cos(q2)
    m11 = i1 + i2 + p.m1 * lc1**2 + p.m2 * (p.l1**2 + lc2**2 + 2.0 * p.l1 * lc2 * c2)
    m12 = i2 + p.m2 * (lc2**2 + p.l1 * lc2 * c2)
    m22 = (i2 + p.m2 * lc2**2) * np.ones_like(q2)
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def arm_derivative(s, a, params: ArmParams | None = None, mass_scale=1.0) -> np.ndarray:
    """``[dq1, dq2, ddq1, ddq2]`` from ``M(q) ddq + C(q, dq) dq + b dq = tau``.

    ``mass_scale`` multiplies both link masses; it may be an array that
    broadcasts against the batch dimensions of ``s`` (used for randomized
    training rollouts).
    """
    p = params or ArmParams()
    s = _check_dim(s, ARM_STATE_DIM, "arm state")
    a = _check_dim(a, ARM_ACTION_DIM, "arm action")
    q2, dq1, dq2 = s[..., 1], s[..., 2], s[..., 3]
    M = arm_mass_matrix(q2, p)
    h = p.m2 * p.l1 * 0.5 * p.l2 * np.sin(q2)
    if not np.isscalar(mass_scale) or mass_scale != 1.0:
        ms = np.asarray(mass_scale, dtype=float)
        M = M * ms[..., None, None]
        h = h * ms
    rhs1 = a[..., 0] + h * (2.0 * dq1 * dq2 + dq2 * dq2) - p.damping * dq1
    rhs2 = a[..., 1] - h * dq1 * dq1 - p.damping * dq2
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] ** 2
    ddq1 = (M[..., 1, 1] * rhs1 - M[..., 0, 1] * rhs2) / det
    ddq2 = (M[..., 0, 0] * rhs2 - M[..., 0, 1] * rhs1) / det
    return np.stack([dq1, dq2, ddq1, ddq2], axis=-1)


def arm_kinetic_energy(s, params: ArmParams | None = None) -> float:
    p = params or ArmParams()
    s = np.asarray(s, dtype=float)
    dq = s[..., 2:]
    M = arm_mass_matrix(s[..., 1], p)
    return 0.5 * np.einsum("...i,...ij,...j->...", dq, M, dq)


def arm_end_effector(s, params: ArmParams | None = None) -> np.ndarray:
    p = params or ArmParams()
    s = np.asarray(s, dtype=float)
    q1, q12 = s[..., 0], s[..., 0] + s[..., 1]
    return np.stack(
        [p.l1 * np.cos(q1) + p.l2 * np.cos(q12), p.l1 * np.sin(q1) + p.l2 * np.sin(q12)], axis=-1
    )


# ------------------------------------------------------------- integration

def integrate_step(fn, s, a, dt: float, method: str = "rk4") -> np.ndarray:
    """One step of ``ds/dt = fn(s, a)`` holding ``a`` constant."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    s = np.asarray(s, dtype=float)
    if method == "euler":
        out = s + dt * fn(s, a)
    elif method == "rk4":
        k1 = fn(s, a)
        k2 = fn(s + 0.5 * dt * k1, a)
        k3 = fn(s + 0.5 * dt * k2, a)
        k4 = fn(s + dt * k3, a)
        out = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ContractError(f"unknown integration method {method!r}")
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("integration produced a non-finite state")
    return out


def discretize_jacobians(A_cont, B_cont, dt: float) -> LinearizedStep:
    """First-order hold: ``A = I + dt A_c``, ``B = dt B_c``."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    A_cont = np.asarray(A_cont, dtype=float)
    B_cont = np.asarray(B_cont, dtype=float)
    if A_cont.shape[0] != A_cont.shape[1] or B_cont.shape[0] != A_cont.shape[0]:
        raise ContractError("Jacobian shapes are inconsistent")
    return LinearizedStep(np.eye(A_cont.shape[0]) + dt * A_cont, dt * B_cont)


def numerical_jacobians(fn, s, a, eps: float = 1e-6):
    """Central-difference Jacobians of ``fn(s, a)``."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    f0 = fn(s, a)
    A = np.empty((f0.shape[0], s.shape[0]))
    B = np.empty((f0.shape[0], a.shape[0]))
    for i in range(s.shape[0]):
        d = np.zeros_like(s)
        d[i] = eps
        A[:, i] = (fn(s + d, a) - fn(s - d, a)) / (2 * eps)
    for i in range(a.shape[0]):
        d = np.zeros_like(a)
        d[i] = eps
        B[:, i] = (fn(s, a + d) - fn(s, a - d)) / (2 * eps)
    return A, B


def clamp_action(a, space: BoxSpace) -> np.ndarray:
    a = _check_dim(a, space.dim, "action")
    return space.clip(a)
