"""Nominal policy: feedforward network, cross-entropy-method training on the
source simulator, restricted spaces and the nominal rollout."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import serialize
from .dynamics import BoxSpace, ContractError, Trajectory

log = logging.getLogger(__name__)

HIDDEN = (64, 64)


class PolicyCorruptionError(FloatingPointError):
    """Policy produced a non-finite action."""


class RolloutDivergedError(FloatingPointError):
    def __init__(self, step: int, msg: str = "rollout diverged"):
        super().__init__(f"{msg} at step {step}")
        self.step = step


@dataclass(frozen=True)
class RestrictedSets:
    state_space: BoxSpace
    action_space: BoxSpace
    margin: float = 0.0


def bound_set(S: BoxSpace, A: BoxSpace, margin: float = 0.0) -> RestrictedSets:
    """Shrink the state and action boxes so the tracking controller keeps
    authority in reserve. ``margin=0`` returns the boxes unchanged."""
    return RestrictedSets(S.shrink(margin), A.shrink(margin), margin)


def layer_shapes(sizes) -> list[tuple[int, int]]:
    return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]


def param_count(sizes) -> int:
    return sum(o * i + o for o, i in layer_shapes(sizes))


@dataclass(frozen=True)
class PolicyParams:
    """ReLU network ``features -> 64 -> 64 -> actions`` followed by a clamp
    onto the restricted action box. Parameters are stored flat, layer by
    layer, each layer as a row-major ``(out, in)`` weight matrix then bias."""

    env: str
    sizes: tuple
    flat: np.ndarray
    action_space: BoxSpace

    def __post_init__(self):
        flat = np.asarray(self.flat, dtype=float)
        if flat.shape != (param_count(self.sizes),):
            raise ContractError(f"expected {param_count(self.sizes)} parameters, got {flat.shape}")
        if not np.all(np.isfinite(flat)):
            raise PolicyCorruptionError("policy parameters are not finite")
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    def layers(self):
        return unpack(self.flat, self.sizes)

    def save(self, path) -> None:
        header = {
            "env": self.env,
            "sizes": list(self.sizes),
            "action_lower": self.action_space.lower.tolist(),
            "action_upper": self.action_space.upper.tolist(),
        }
        arrays = {}
        for k, (W, b) in enumerate(self.layers()):
            arrays[f"W{k}"] = W
            arrays[f"b{k}"] = b
        serialize.write(path, "policy", header, arrays)

    @classmethod
    def load(cls, path) -> "PolicyParams":
        header, arrays = serialize.read(path, "policy")
        sizes = tuple(header["sizes"])
        parts = []
        for k in range(len(sizes) - 1):
            parts += [arrays[f"W{k}"].ravel(), arrays[f"b{k}"].ravel()]
        box = BoxSpace(np.array(header["action_lower"]), np.array(header["action_upper"]))
        return cls(header["env"], sizes, np.concatenate(parts), box)


def unpack(flat, sizes):
    """Split flat parameter vectors ``(..., D)`` into ``[(W, b), ...]``."""
    flat = np.asarray(flat)
    lead = flat.shape[:-1]
    out, pos = [], 0
    for o, i in layer_shapes(sizes):
        W = flat[..., pos : pos + o * i].reshape(lead + (o, i))
        pos += o * i
        b = flat[..., pos : pos + o]
        pos += o
        out.append((W, b))
    return out


def forward(layers, feats):
    h = feats
    for k, (W, b) in enumerate(layers):
        h = W @ h + b
        if k < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward_batch(layers, feats):
    """``layers`` carry a leading candidate axis P; ``feats`` is ``(P, R, in)``."""
    h = feats
    for k, (W, b) in enumerate(layers):
        h = np.matmul(h, np.swapaxes(W, -1, -2)) + b[:, None, :]
        if k < len(layers) - 1:
            np.maximum(h, 0.0, out=h)
    return h


def init_params(sizes, rng: np.random.Generator, output_scale: float = 0.0) -> np.ndarray:
    """He-initialised hidden layers; output layer scaled by ``output_scale``."""
    parts = []
    shapes = layer_shapes(sizes)
    for k, (o, i) in enumerate(shapes):
        scale = np.sqrt(2.0 / i) if k < len(shapes) - 1 else output_scale / np.sqrt(i)
        parts += [scale * rng.standard_normal(o * i), np.zeros(o)]
    return np.concatenate(parts)


def init_std_vector(sizes, init_std: float, output_std: float) -> np.ndarray:
    """Per-parameter search spread: hidden layers relative to their He scale,
    output layer absolute."""
    parts = []
    shapes = layer_shapes(sizes)
    for k, (o, i) in enumerate(shapes):
        if k < len(shapes) - 1:
            parts += [np.full(o * i, init_std * np.sqrt(2.0 / i)), np.full(o, init_std)]
        else:
            parts += [np.full(o * i, output_std), np.full(o, output_std)]
    return np.concatenate(parts)


def policy_eval(params: PolicyParams, s, env) -> np.ndarray:
    """Deterministic action for state ``s``, clamped onto the policy's box."""
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ContractError("state must be finite")
    out = forward(params.layers(), env.features(s))
    if not np.all(np.isfinite(out)):
        raise PolicyCorruptionError("policy output is not finite")
    return params.action_space.clip(out)


def rollout_nominal(params: PolicyParams, env, s0, T: int | None = None) -> Trajectory:
    """Closed-loop rollout of the policy on the deterministic source."""
    T = env.horizon if T is None else T
    states = np.empty((T + 1, env.state_dim))
    actions = np.empty((T, env.action_dim))
    states[0] = s0
    for t in range(T):
        a = policy_eval(params, states[t], env)
        actions[t] = a
        nxt = env.step(states[t], a)
        if not np.all(np.isfinite(nxt)):
            raise RolloutDivergedError(t + 1)
        states[t + 1] = nxt
    return Trajectory(states, actions, env.dt)


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainConfig:
    population: int = 64
    elite_fraction: float = 0.125
    iterations: int = 250
    rollouts: int = 64
    init_std: float = 0.05
    output_std: float = 0.2
    min_std: float = 0.002
    std_shrink: float = 0.7
    output_scale: float = 0.0
    randomization_std: tuple = ()
    seed: int = 0
    hidden: tuple = HIDDEN

    def __post_init__(self):
        if not 0.0 < self.elite_fraction < 1.0:
            raise ContractError("elite_fraction must lie in (0, 1)")
        if self.population < 10:
            raise ContractError("population must be at least 10")
        if not 0.0 <= self.std_shrink < 1.0:
            raise ContractError("std_shrink must lie in [0, 1)")

    @property
    def n_elite(self) -> int:
        return max(2, int(round(self.elite_fraction * self.population)))


@dataclass
class CemResult:
    best: np.ndarray
    best_cost: float
    history: list = field(default_factory=list)  # (iteration, best, elite mean, population mean)


def cem_minimize(objective, mean, std, cfg: TrainConfig, rng: np.random.Generator) -> CemResult:
    """Cross-entropy method with elitism.

    ``objective`` maps a ``(P, D)`` array of candidates to ``P`` costs;
    non-finite costs count as +inf. The previous elites are re-entered into
    every population, so with a deterministic objective the elite mean cost
    never increases. The spread shrinks by at most ``std_shrink`` per
    iteration; a few clustered elites would otherwise freeze the search
    before the mean arrives.
    """
    mean = np.array(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape).copy()
    n_elite = cfg.n_elite
    elites = np.empty((0, mean.size))
    elite_costs = np.empty(0)
    history = []
    for it in range(cfg.iterations):
        n_new = cfg.population - elites.shape[0] - 1
        cand = mean + std * rng.standard_normal((n_new, mean.size))
        cand = np.concatenate([mean[None, :], cand])
        costs = np.asarray(objective(cand), dtype=float)
        costs = np.where(np.isfinite(costs), costs, np.inf)
        pool = np.concatenate([elites, cand])
        pool_costs = np.concatenate([elite_costs, costs])
        order = np.argsort(pool_costs, kind="stable")[:n_elite]
        elites, elite_costs = pool[order], pool_costs[order]
        finite = np.isfinite(elite_costs)
        if finite.any():
            mean = elites[finite].mean(axis=0)
            std = np.maximum(np.maximum(elites[finite].std(axis=0), cfg.std_shrink * std), cfg.min_std)
        history.append((it, float(elite_costs[0]), float(np.mean(elite_costs)), float(np.mean(costs))))
        log.debug("cem iter %d best %.6g elite-mean %.6g", it, elite_costs[0], np.mean(elite_costs))
    return CemResult(elites[0].copy(), float(elite_costs[0]), history)


def draw_randomization(env, cfg: TrainConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-rollout dynamics multipliers, Gaussian around 1, truncated at 3 sigma."""
    k = env.randomization_dim
    sd = np.zeros(k) if not cfg.randomization_std else np.asarray(cfg.randomization_std, dtype=float)
    if sd.shape != (k,):
        raise ContractError(f"randomization_std needs {k} entries for the {env.name} environment")
    z = np.clip(rng.standard_normal((n, k)), -3.0, 3.0)
    return 1.0 + sd * z


def batch_rollout_cost(flats, sizes, env, cost, starts, rand, action_space: BoxSpace,
                       state_space: BoxSpace) -> np.ndarray:
    """Mean episode cost of each candidate over the given starts; +inf for
    any rollout that leaves ``state_space`` or goes non-finite."""
    layers = unpack(flats, sizes)
    P, R = flats.shape[0], starts.shape[0]
    s = np.broadcast_to(starts, (P, R, env.state_dim)).copy()
    total = np.zeros((P, R))
    bad = np.zeros((P, R), dtype=bool)
    randomized = rand if np.any(rand != 1.0) else None
    for _ in range(env.horizon):
        a = action_space.clip(forward_batch(layers, env.features(s)))
        total += cost.step_cost(s, a)
        s = env.step_batch(s, a, randomized)
        bad |= ~np.all(np.isfinite(s), axis=-1)
        bad |= np.any((s < state_space.lower) | (s > state_space.upper), axis=-1)
    total[bad] = np.inf
    return total.mean(axis=1)


def train_policy(env, cost, cfg: TrainConfig, restricted: RestrictedSets | None = None,
                 return_history: bool = False):
    """Train the nominal policy on the (optionally randomized) source with CEM.

    The evaluation starts and dynamics draws are fixed for the whole run
    (common random numbers), so candidates are compared on equal terms.
    """
    restricted = restricted or bound_set(env.state_space, env.action_space, 0.0)
    root = np.random.SeedSequence(cfg.seed)
    init_ss, start_ss, rand_ss, cem_ss = root.spawn(4)
    sizes = (env.feature_dim,) + tuple(cfg.hidden) + (env.action_dim,)
    starts_rng = np.random.default_rng(start_ss)
    starts = np.stack([env.sample_initial_state(starts_rng) for _ in range(cfg.rollouts)])
    rand = draw_randomization(env, cfg, cfg.rollouts, np.random.default_rng(rand_ss))
    mean = init_params(sizes, np.random.default_rng(init_ss), cfg.output_scale)

    def objective(flats):
        return batch_rollout_cost(flats, sizes, env, cost, starts, rand[None, :, :],
                                  restricted.action_space, restricted.state_space)

    std0 = init_std_vector(sizes, cfg.init_std, cfg.output_std)
    result = cem_minimize(objective, mean, std0, cfg, np.random.default_rng(cem_ss))
    if not np.isfinite(result.best_cost):
        raise RolloutDivergedError(env.horizon, "no candidate stayed inside the restricted state space")
    params = PolicyParams(env.name, sizes, result.best, restricted.action_space)
    if return_history:
        return params, result.history
    return params
