"""Target-environment disturbances and the composed target step
``s' = f(s, a) + w``.

Four models: a random hill landscape (state dependent, car only), biased
additive control noise, zero-mean additive process noise, and a dynamics
parameter scale. Noise sequences are drawn up front from the episode seed, so
the realization at step ``t`` does not depend on which controller is running.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _backend
from .dynamics import BoxSpace, ContractError
from .envs import NO_HILLS

GRAVITY = 9.81


class DivergenceError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"target state became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class HillField:
    """Rows of ``[cx, cy, radius, height]``."""

    hills: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.hills, dtype=float).reshape(-1, 4)
        if np.any(h[:, 2] <= 0) or np.any(h[:, 3] < 0):
            raise ContractError("hill radii must be positive and heights non-negative")
        object.__setattr__(self, "hills", np.ascontiguousarray(h))

    @property
    def centers(self) -> np.ndarray:
        return self.hills[:, :2]

    @property
    def radii(self) -> np.ndarray:
        return self.hills[:, 2]

    @property
    def heights(self) -> np.ndarray:
        return self.hills[:, 3]

    def height(self, x, y) -> np.ndarray:
        """Landscape height (for plotting / inspection)."""
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        d = np.hypot(x - self.hills[:, 0], y - self.hills[:, 1])
        bump = 0.5 * self.heights * (1.0 + np.cos(np.pi * d / self.radii))
        return np.sum(np.where(d < self.radii, bump, 0.0), axis=-1)


def generate_hills(rng: np.random.Generator, workspace: BoxSpace, count: int = 20,
                   radius_range=(0.5, 2.0), height_range=(0.05, 0.3)) -> HillField:
    if workspace.dim != 2:
        raise ContractError("hill workspace must be the 2-D position box")
    centers = rng.uniform(workspace.lower, workspace.upper, size=(count, 2))
    radii = rng.uniform(*radius_range, size=count)
    heights = rng.uniform(*height_range, size=count)
    return HillField(np.column_stack([centers, radii, heights]))


def hill_accel(field: HillField, s) -> float:
    """Longitudinal acceleration ``-g * grad h . heading`` at car state ``s``.

    Downhill along the heading accelerates the car.
    """
    return float(_backend.hill_accel(float(s[0]), float(s[1]), float(np.cos(s[2])),
                                     float(np.sin(s[2])), field.hills))


def hill_gradient_accel(field: HillField, x: float, y: float) -> np.ndarray:
    """``-g * grad h`` at a position (the acceleration for headings +x and +y)."""
    return np.array([
        _backend.hill_accel(x, y, 1.0, 0.0, field.hills),
        _backend.hill_accel(x, y, 0.0, 1.0, field.hills),
    ])


@dataclass(frozen=True)
class UniformNoise:
    lower: np.ndarray
    upper: np.ndarray
    target: str = "state"

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ContractError("noise bounds must have equal shape with lower <= upper")
        if self.target not in ("control", "state"):
            raise ContractError("noise target must be 'control' or 'state'")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def scaled(self, factor: float) -> "UniformNoise":
        return UniformNoise(self.lower * factor, self.upper * factor, self.target)

    def corner_norm(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))


def sample_noise(noise: UniformNoise, rng: np.random.Generator, size=None) -> np.ndarray:
    shape = (noise.dim,) if size is None else (size, noise.dim)
    return rng.uniform(noise.lower, noise.upper, size=shape)


@dataclass(frozen=True)
class ParamScale:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ContractError("parameter scale gamma must be positive")


class TargetEnv:
    """Source dynamics composed with any subset of the four disturbances.

    Order inside :meth:`step`: parameter scale (fixed at construction),
    control noise added to the action, hill acceleration during integration,
    one RK4 step, then process noise added to the resulting state.
    """

    def __init__(self, source, hills: HillField | None = None,
                 control_noise: UniformNoise | None = None,
                 process_noise: UniformNoise | None = None,
                 param_scale: ParamScale | None = None, seed: int = 0,
                 horizon: int | None = None):
        if hills is not None and source.name != "car":
            raise ContractError("hills apply to the car environment only")
        self.source = source
        self.hills = hills
        self.control_noise = control_noise
        self.process_noise = process_noise
        self.param_scale = param_scale
        self.seed = seed
        self.horizon = source.horizon if horizon is None else horizon
        self.dynamics = source if param_scale is None else source.with_param_scale(param_scale.gamma)
        self._hill_array = NO_HILLS if hills is None else hills.hills
        ctrl_ss, proc_ss = np.random.SeedSequence(seed).spawn(2)
        self._ctrl = None
        self._proc = None
        if control_noise is not None:
            if control_noise.dim != source.action_dim:
                raise ContractError("control noise dimension must match the action dimension")
            self._ctrl = sample_noise(control_noise, np.random.default_rng(ctrl_ss), self.horizon)
        if process_noise is not None:
            if process_noise.dim != source.state_dim:
                raise ContractError("process noise dimension must match the state dimension")
            self._proc = sample_noise(process_noise, np.random.default_rng(proc_ss), self.horizon)

    @property
    def active(self) -> list[str]:
        names = []
        if self.hills is not None:
            names.append("hills")
        if self.control_noise is not None:
            names.append("control_noise")
        if self.process_noise is not None:
            names.append("process_noise")
        if self.param_scale is not None:
            names.append("param_scale")
        return names

    def control_noise_at(self, t: int) -> np.ndarray:
        return np.zeros(self.source.action_dim) if self._ctrl is None else self._ctrl[t]

    def process_noise_at(self, t: int) -> np.ndarray:
        return np.zeros(self.source.state_dim) if self._proc is None else self._proc[t]

    def step(self, s, a, t: int) -> np.ndarray:
        if self._ctrl is not None:
            a = a + self._ctrl[t]
        nxt = self.dynamics.step(s, a, self._hill_array)
        if self._proc is not None:
            nxt = nxt + self._proc[t]
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(t + 1)
        return nxt


def target_step(env: TargetEnv, s, a, t: int) -> np.ndarray:
    return env.step(s, a, t)


def support_radius(env: TargetEnv, samples: int = 2000, rng: np.random.Generator | None = None,
                   workspace: BoxSpace | None = None) -> float:
    """Upper estimate of the per-step state disturbance norm.

    Sums (triangle inequality) the box-corner norm of process noise, the
    largest corner of control noise mapped through the discrete input matrix,
    the parameter-scale effect on the control channel at the action bounds,
    and a sampled maximum of the hill acceleration integrated over one step.
    """
    total = 0.0
    src = env.source
    if env.process_noise is not None:
        total += env.process_noise.corner_norm()
    B = src.discrete_input_matrix()
    if env.control_noise is not None:
        n = env.control_noise
        corners = np.array(list(itertools.product(*zip(n.lower, n.upper))))
        total += float(np.max(np.linalg.norm(corners @ B.T, axis=1)))
    if env.param_scale is not None and env.param_scale.gamma != 1.0:
        g = env.param_scale.gamma
        box = src.action_space
        corners = np.array(list(itertools.product(*zip(box.lower, box.upper))))
        if src.name == "car":
            eff = corners @ B.T * 0.0
            eff[:, 4] = (g - 1.0) * src.dt * corners[:, 1]
        else:
            eff = (1.0 / g - 1.0) * corners @ B.T
        total += float(np.max(np.linalg.norm(eff, axis=1)))
    if env.hills is not None:
        rng = np.random.default_rng(0) if rng is None else rng
        ws = workspace or BoxSpace(np.full(2, -10.0), np.full(2, 10.0))
        pts = rng.uniform(ws.lower, ws.upper, size=(samples, 2))
        pts = np.concatenate([pts, env.hills.centers + 0.5 * env.hills.radii[:, None] * np.array([1.0, 0.0])])
        acc = max(float(np.linalg.norm(hill_gradient_accel(env.hills, x, y))) for x, y in pts)
        total += acc * float(np.hypot(src.dt, 0.5 * src.dt**2))
    return total
