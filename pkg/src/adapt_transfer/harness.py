"""Episode runners (ideal, naive, adapt), verification checks, and the
multi-episode experiments built on them.

Seeding: every episode gets a SeedSequence derived from ``(master seed,
episode index)``. Its first child draws the initial state, its second seeds
the disturbance streams, so naive and adapt runs of the same episode see the
same start and the same noise at every step.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .costs import make_cost
from .disturbances import (
    DivergenceError,
    ParamScale,
    TargetEnv,
    UniformNoise,
    generate_hills,
    support_radius,
)
from .dynamics import BoxSpace, ContractError, Trajectory
from .mpc import ControllerError, MpcConfig, aux_mpc
from .policy import PolicyParams, RolloutDivergedError, policy_eval, rollout_nominal

log = logging.getLogger(__name__)

MODES = ("ideal", "naive", "adapt")
CAR_DISTURBANCES = ("hills", "control_noise", "process_noise", "param_scale")
ARM_DISTURBANCES = ("control_noise", "process_noise", "param_scale")


# ------------------------------------------------------------------ results

@dataclass
class EpisodeResult:
    mode: str
    states: np.ndarray  # (T+1, n), NaN after divergence
    actions: np.ndarray  # (T, m)
    step_cost: np.ndarray  # (T,)
    baseline_step_cost: np.ndarray  # (T,) nominal on source from the same start
    nominal: Trajectory
    mpc_cost: np.ndarray  # (T,) C*_N, NaN outside adapt mode
    saturated: np.ndarray  # (T,) bool
    iterations: np.ndarray  # (T,) relinearization iterations, 0 outside adapt mode
    seed: int = 0
    disturbance: str = "none"
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    @property
    def cum_cost(self) -> np.ndarray:
        return np.cumsum(self.step_cost)

    @property
    def baseline_cum_cost(self) -> np.ndarray:
        return np.cumsum(self.baseline_step_cost)

    @property
    def normalized(self) -> np.ndarray:
        base = self.baseline_cum_cost
        cum = self.cum_cost
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(base > 0, cum / np.where(base > 0, base, 1.0), np.where(cum > 0, np.inf, 1.0))
        if self.mode == "ideal":
            out = np.ones_like(out)
        return out

    @property
    def final_normalized(self) -> float:
        return float(self.normalized[-1]) if self.horizon else 1.0

    @property
    def value(self) -> float:
        return float(np.sum(self.step_cost))

    @property
    def baseline_value(self) -> float:
        return float(np.sum(self.baseline_step_cost))

    @property
    def value_gap(self) -> float:
        return abs(self.value - self.baseline_value)

    def tracking_deviation(self, env) -> float:
        """Mean distance between the realized and nominal tracked points."""
        n = self.horizon + 1
        p = env.tracked_point(self.states[:n])
        pbar = env.tracked_point(self.nominal.states[:n])
        return float(np.mean(np.linalg.norm(p - pbar, axis=-1)))


def _blank(T, n, m):
    return (np.full((T + 1, n), np.nan), np.full((T, m), np.nan), np.full(T, np.nan),
            np.full(T, np.nan), np.zeros(T, dtype=bool), np.zeros(T, dtype=int))


def run_ideal(policy: PolicyParams, env, s0, cost=None, seed: int = 0) -> EpisodeResult:
    """Nominal policy on the source; its own normalization baseline."""
    cost = cost or make_cost(env)
    nom = rollout_nominal(policy, env, s0)
    c = cost.step_cost(nom.states[:-1], nom.actions)
    T = nom.horizon
    return EpisodeResult("ideal", nom.states.copy(), nom.actions.copy(), c, c.copy(), nom,
                         np.full(T, np.nan), np.zeros(T, dtype=bool), np.zeros(T, dtype=int), seed)


def run_naive(policy: PolicyParams, target: TargetEnv, s0, cost=None, seed: int = 0,
              nominal: Trajectory | None = None) -> EpisodeResult:
    """Policy executed directly on the target."""
    env = target.source
    cost = cost or make_cost(env)
    nom = nominal if nominal is not None else rollout_nominal(policy, env, s0)
    T = nom.horizon
    states, actions, sc, mc, sat, its = _blank(T, env.state_dim, env.action_dim)
    states[0] = s0
    diverged = None
    for t in range(T):
        a = policy_eval(policy, states[t], env)
        actions[t] = a
        sc[t] = cost.step_cost(states[t], a)
        try:
            states[t + 1] = target.step(states[t], a, t)
        except DivergenceError as exc:
            diverged = exc.step
            break
    base = cost.step_cost(nom.states[:-1], nom.actions)
    return EpisodeResult("naive", states, actions, sc, base, nom, mc, sat, its, seed,
                         "+".join(target.active) or "none", diverged)


def run_adapt(policy: PolicyParams, target: TargetEnv, model, cfg: MpcConfig, s0, cost=None,
              seed: int = 0, nominal: Trajectory | None = None) -> EpisodeResult:
    """Nominal trajectory from the source, then the tracking MPC on the target."""
    env = target.source
    cost = cost or make_cost(env)
    nom = nominal if nominal is not None else rollout_nominal(policy, env, s0)
    T = nom.horizon
    states, actions, sc, mc, sat, its = _blank(T, env.state_dim, env.action_dim)
    states[0] = s0
    diverged = None
    for t in range(T):
        try:
            sol = aux_mpc(states[t], t, nom, model, cfg)
        except ControllerError:
            diverged = t
            break
        actions[t] = sol.action
        mc[t] = sol.cost
        sat[t] = sol.saturated
        its[t] = sol.iterations
        sc[t] = cost.step_cost(states[t], sol.action)
        try:
            states[t + 1] = target.step(states[t], sol.action, t)
        except DivergenceError as exc:
            diverged = exc.step
            break
    base = cost.step_cost(nom.states[:-1], nom.actions)
    return EpisodeResult("adapt", states, actions, sc, base, nom, mc, sat, its, seed,
                         "+".join(target.active) or "none", diverged)


# ------------------------------------------------------------- verification

@dataclass
class VerificationReport:
    lipschitz: float
    tube_slack: np.ndarray  # C*_N - q_min |P_pos (s - s_bar)|^2
    action_slack: np.ndarray  # C*_N - r_min |a - a_bar|^2, NaN where saturated
    gap: float
    gap_bound: float
    support_radius: float
    tolerance: float = 1e-9

    @property
    def gap_slack(self) -> float:
        return self.gap_bound - self.gap

    @property
    def tube_ok(self) -> bool:
        return bool(np.all(self.tube_slack >= -self.tolerance))

    @property
    def action_ok(self) -> bool:
        s = self.action_slack[np.isfinite(self.action_slack)]
        return bool(np.all(s >= -self.tolerance))

    @property
    def gap_ok(self) -> bool:
        return bool(self.gap_slack >= -self.tolerance * max(1.0, self.gap_bound))

    @property
    def passed(self) -> bool:
        return self.tube_ok and self.action_ok and self.gap_ok


def verify_episode(result: EpisodeResult, cost, cfg: MpcConfig, radius: float = float("nan"),
                   tolerance: float = 1e-9) -> VerificationReport:
    """Check the tube lower bound, the action bound and the value-gap chain
    on a completed adapt episode."""
    if result.mode != "adapt":
        raise ContractError("verification needs an adapt episode")
    if result.diverged:
        raise ContractError("cannot verify a diverged episode")
    T = result.horizon
    nom = result.nominal
    ds = result.states[:T] - nom.states[:T]
    da = result.actions - nom.actions
    pos = ds[:, cfg.tracked]
    tube = result.mpc_cost - cfg.q_min * np.sum(pos * pos, axis=1)
    act = result.mpc_cost - cfg.r_min * np.sum(da * da, axis=1)
    act = np.where(result.saturated, np.nan, act)
    L = cost.lipschitz(np.concatenate([result.states[:T], nom.states[:T]]),
                       np.concatenate([result.actions, nom.actions]))
    bound = L * float(np.sum(np.linalg.norm(ds, axis=1) + np.linalg.norm(da, axis=1)))
    return VerificationReport(L, tube, act, result.value_gap, bound, radius, tolerance)


# -------------------------------------------------------------- experiments

@dataclass(frozen=True)
class DisturbanceSpec:
    """Magnitudes for every disturbance type; ``active`` selects a subset."""

    active: tuple = ()
    control_lower: tuple = (0.3, 0.06)
    control_upper: tuple = (1.5, 0.36)
    process_half_width: tuple = (0.01,) * 5
    gamma: float = 0.5
    hill_count: int = 20
    hill_workspace: tuple = (-6.0, -6.0, 6.0, 6.0)
    hill_radius: tuple = (1.5, 3.0)
    hill_height: tuple = (0.05, 0.15)
    process_scale: float = 1.0
    control_scale: float = 1.0

    def with_active(self, *names) -> "DisturbanceSpec":
        return _replace(self, active=tuple(names))

    @property
    def label(self) -> str:
        return "+".join(self.active) or "none"


def _replace(obj, **kw):
    from dataclasses import replace

    return replace(obj, **kw)


def build_target(env, spec: DisturbanceSpec, seed_seq: np.random.SeedSequence) -> TargetEnv:
    hills = control = process = scale = None
    # derived without spawn() so repeated builds from one sequence agree
    words = seed_seq.generate_state(4).tolist()
    hill_ss = np.random.SeedSequence(words + [0])
    if "hills" in spec.active:
        ws = BoxSpace(np.array(spec.hill_workspace[:2]), np.array(spec.hill_workspace[2:]))
        hills = generate_hills(np.random.default_rng(hill_ss), ws, spec.hill_count,
                               spec.hill_radius, spec.hill_height)
    if "control_noise" in spec.active:
        control = UniformNoise(spec.control_lower, spec.control_upper, "control").scaled(spec.control_scale)
    if "process_noise" in spec.active:
        w = np.asarray(spec.process_half_width, dtype=float)
        process = UniformNoise(-w, w, "state").scaled(spec.process_scale)
    if "param_scale" in spec.active:
        scale = ParamScale(spec.gamma)
    unknown = set(spec.active) - set(CAR_DISTURBANCES)
    if unknown:
        raise ContractError(f"unknown disturbance types {sorted(unknown)}")
    seed = int(np.random.SeedSequence(words + [1]).generate_state(1)[0])
    return TargetEnv(env, hills, control, process, scale, seed=seed)


def episode_seeds(master: int, episode: int):
    """``(start rng, disturbance SeedSequence)`` for one paired episode."""
    ss = np.random.SeedSequence([master, episode])
    start_ss, dist_ss = ss.spawn(2)
    return np.random.default_rng(start_ss), dist_ss


@dataclass(frozen=True)
class EpisodeTask:
    policy: PolicyParams
    env: object
    spec: DisturbanceSpec
    mpc: MpcConfig
    model_kind: str
    fit: object
    master_seed: int
    episode: int
    modes: tuple = ("naive", "adapt")


@dataclass
class EpisodeBundle:
    episode: int
    disturbance: str
    results: dict = field(default_factory=dict)  # mode -> EpisodeResult
    error: str | None = None


def run_episode_task(task: EpisodeTask) -> EpisodeBundle:
    from .models import make_model

    env = task.env
    cost = make_cost(env)
    start_rng, dist_ss = episode_seeds(task.master_seed, task.episode)
    s0 = env.sample_initial_state(start_rng)
    bundle = EpisodeBundle(task.episode, task.spec.label)
    try:
        nom = rollout_nominal(task.policy, env, s0)
        fit_rng = np.random.default_rng(np.random.SeedSequence([task.master_seed, task.episode, 7]))
        for mode in task.modes:
            target = build_target(env, task.spec, dist_ss)
            if mode == "ideal":
                res = run_ideal(task.policy, env, s0, cost, task.episode)
            elif mode == "naive":
                res = run_naive(task.policy, target, s0, cost, task.episode, nom)
            elif mode == "adapt":
                model = make_model(task.model_kind, env, nom, task.fit, fit_rng)
                res = run_adapt(task.policy, target, model, task.mpc, s0, cost, task.episode, nom)
            else:
                raise ContractError(f"unknown mode {mode!r}")
            res.disturbance = task.spec.label
            bundle.results[mode] = res
    except (RolloutDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        bundle.error = f"{type(exc).__name__}: {exc}"
        log.warning("episode %d (%s) failed: %s", task.episode, task.spec.label, exc)
    return bundle


def run_tasks(tasks, jobs: int = 1) -> list[EpisodeBundle]:
    """Run episodes, in a process pool when ``jobs > 1``. Output order is the
    input order regardless of completion order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [run_episode_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_episode_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def mean_se(values) -> tuple[float, float, int]:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), 0
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se, int(v.size)


@dataclass
class SuiteResult:
    env: str
    bundles: dict  # disturbance -> list[EpisodeBundle]
    reports: dict  # disturbance -> list[VerificationReport]

    def summary_rows(self):
        rows = []
        for dist, bundles in self.bundles.items():
            for mode in ("naive", "adapt"):
                vals = [b.results[mode].final_normalized for b in bundles
                        if mode in b.results and not b.results[mode].diverged]
                mean, se, k = mean_se(vals)
                failed = sum(1 for b in bundles if mode not in b.results or b.results[mode].diverged)
                rows.append({"mode": mode, "disturbance": dist, "mean": mean, "std_error": se,
                             "episodes": k, "failed": failed})
        return rows

    def ratio(self, dist: str) -> float:
        rows = {r["mode"]: r for r in self.summary_rows() if r["disturbance"] == dist}
        return rows["naive"]["mean"] / rows["adapt"]["mean"]

    def verification_rows(self):
        rows = []
        checks = (("tube_lower_bound", lambda r: r.tube_ok, lambda r: float(np.min(r.tube_slack))),
                  ("action_bound", lambda r: r.action_ok,
                   lambda r: float(np.nanmin(r.action_slack)) if np.any(np.isfinite(r.action_slack)) else float("nan")),
                  ("value_gap_chain", lambda r: r.gap_ok, lambda r: r.gap_slack))
        for dist, reports in self.reports.items():
            for name, ok, slack in checks:
                if reports:
                    rate = sum(ok(r) for r in reports) / len(reports)
                    worst = min(slack(r) for r in reports)
                else:
                    rate, worst = float("nan"), float("nan")
                rows.append({"disturbance": dist, "check": name, "pass_rate": rate,
                             "worst_slack": worst, "episodes": len(reports)})
        return rows


def run_suite(policy, env, base_spec: DisturbanceSpec, mpc: MpcConfig, model_kind: str, fit,
              episodes: int, master_seed: int, disturbances=None, jobs: int = 1) -> SuiteResult:
    """Naive and adapt over ``episodes`` paired seeds for each disturbance type."""
    disturbances = disturbances or (CAR_DISTURBANCES if env.name == "car" else ARM_DISTURBANCES)
    tasks = []
    for dist in disturbances:
        spec = base_spec.with_active(dist)
        tasks += [EpisodeTask(policy, env, spec, mpc, model_kind, fit, master_seed, k) for k in range(episodes)]
    flat = run_tasks(tasks, jobs)
    cost = make_cost(env)
    bundles, reports = {}, {}
    for i, dist in enumerate(disturbances):
        chunk = flat[i * episodes : (i + 1) * episodes]
        bundles[dist] = chunk
        spec = base_spec.with_active(dist)
        radius = support_radius(build_target(env, spec, np.random.SeedSequence(master_seed)))
        reports[dist] = [verify_episode(b.results["adapt"], cost, mpc, radius) for b in chunk
                         if "adapt" in b.results and not b.results["adapt"].diverged]
    return SuiteResult(env.name, bundles, reports)


@dataclass
class TrendRow:
    scale: float
    mean_gap: float
    std_error: float
    episodes: int
    radius: float


@dataclass
class TrendResult:
    rows: list
    horizon: int

    @property
    def nondecreasing(self) -> bool:
        """Non-decreasing means, allowing one inversion within one standard error."""
        inversions = 0
        for a, b in zip(self.rows, self.rows[1:]):
            if b.mean_gap < a.mean_gap:
                if a.mean_gap - b.mean_gap > max(a.std_error, b.std_error):
                    return False
                inversions += 1
        return inversions <= 1

    @property
    def slope(self) -> float:
        """Least-squares slope of mean gap against ``T sqrt(radius)`` through the origin."""
        x = np.array([self.horizon * math.sqrt(r.radius) for r in self.rows])
        y = np.array([r.mean_gap for r in self.rows])
        den = float(x @ x)
        return float(x @ y / den) if den > 0 else float("nan")


def scaling_trend(policy, env, base_spec: DisturbanceSpec, mpc: MpcConfig, model_kind: str, fit,
                  scales, episodes: int, master_seed: int, jobs: int = 1) -> TrendResult:
    """Mean adapt value gap under process noise scaled by each factor."""
    if min(scales) < 0:
        raise ContractError("scales must be non-negative")
    rows = []
    for eps in scales:
        spec = _replace(base_spec, active=("process_noise",), process_scale=float(eps))
        tasks = [EpisodeTask(policy, env, spec, mpc, model_kind, fit, master_seed, k, ("adapt",))
                 for k in range(episodes)]
        out = run_tasks(tasks, jobs)
        gaps = [b.results["adapt"].value_gap for b in out if "adapt" in b.results and not b.results["adapt"].diverged]
        mean, se, k = mean_se(gaps)
        radius = support_radius(build_target(env, spec, np.random.SeedSequence(master_seed)))
        rows.append(TrendRow(float(eps), mean, se, k, radius))
    return TrendResult(rows, env.horizon)


@dataclass
class SweepResult:
    control_scales: tuple
    gammas: tuple
    cells: list  # dicts: control_scale, gamma, mode, mean, std_error, episodes, failed


def disturbance_sweep(policy, env, base_spec: DisturbanceSpec, mpc: MpcConfig, model_kind: str, fit,
                      control_scales, gammas, episodes: int, master_seed: int, hills: bool = True,
                      jobs: int = 1) -> SweepResult:
    """Grid over control-noise scale and parameter scale, with hills on top."""
    cells = []
    tasks = []
    keys = []
    for cs in control_scales:
        for g in gammas:
            active = ["control_noise", "param_scale"] + (["hills"] if hills else [])
            spec = _replace(base_spec, active=tuple(active), control_scale=float(cs), gamma=float(g))
            keys.append((cs, g))
            tasks += [EpisodeTask(policy, env, spec, mpc, model_kind, fit, master_seed, k) for k in range(episodes)]
    flat = run_tasks(tasks, jobs)
    for i, (cs, g) in enumerate(keys):
        chunk = flat[i * episodes : (i + 1) * episodes]
        for mode in ("naive", "adapt"):
            vals = [b.results[mode].final_normalized for b in chunk
                    if mode in b.results and not b.results[mode].diverged]
            mean, se, k = mean_se(vals)
            cells.append({"control_scale": float(cs), "gamma": float(g), "mode": mode, "mean": mean,
                          "std_error": se, "episodes": k, "failed": episodes - k})
    return SweepResult(tuple(control_scales), tuple(gammas), cells)


# ---------------------------------------------------------------------- CSV

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".9g")
    return str(x)


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    return buf.getvalue()


EPISODE_COLUMNS = ("t", "cost", "cum_cost", "baseline_cum_cost", "normalized", "mpc_cost", "saturated")


def episode_rows(result: EpisodeResult):
    cum, base, norm = result.cum_cost, result.baseline_cum_cost, result.normalized
    return [{"t": t, "cost": result.step_cost[t], "cum_cost": cum[t], "baseline_cum_cost": base[t],
             "normalized": norm[t], "mpc_cost": result.mpc_cost[t], "saturated": bool(result.saturated[t])}
            for t in range(result.horizon)]
