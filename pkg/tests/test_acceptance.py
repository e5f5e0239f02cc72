"""Acceptance criteria 1-10. Each test records one pass/fail line, printed in
the terminal summary, and then asserts the criterion at its pinned tolerance."""
import time

import numpy as np
import pytest

from adapt_transfer import config as cfgmod
from adapt_transfer.cli import main
from adapt_transfer.disturbances import TargetEnv
from adapt_transfer.dynamics import car_derivative, car_jacobians, numerical_jacobians
from adapt_transfer.harness import CAR_DISTURBANCES, episode_seeds, mean_se, run_adapt, run_ideal, run_suite, \
    scaling_trend
from adapt_transfer.models import AnalyticModel, FitConfig, fit_tv_linear
from adapt_transfer.mpc import solve_tracking_lqr

from conftest import ARM_MARGIN, ARM_TRAIN, CAR_MARGIN, CAR_TRAIN
from oracles import dense_tracking_qp
from test_models import ScalarLinearEnv, _scalar_nominal

pytestmark = pytest.mark.slow

EPISODES = 50


def _setup(name):
    cfg = cfgmod.parse_config({"environment": name})
    env = cfgmod.build_env(cfg)
    return cfg, env, cfgmod.disturbance_spec(cfg), cfgmod.mpc_config(cfg, env), cfgmod.fit_config(cfg)


@pytest.fixture(scope="module")
def car_suite(car_policy):
    cfg, env, spec, mpc, fit = _setup("car")
    assert cfgmod.train_config(cfg) == CAR_TRAIN and cfg.train.margin == CAR_MARGIN
    t0 = time.perf_counter()
    res = run_suite(car_policy, env, spec, mpc, cfg.model.kind, fit, EPISODES, cfg.seed, CAR_DISTURBANCES)
    return res, mpc, time.perf_counter() - t0


def _adapt_results(suite):
    return {d: [b.results["adapt"] for b in bundles if "adapt" in b.results] for d, bundles in suite.bundles.items()}


def test_criterion_1_fixed_point(car_policy, car_env, acceptance):
    mpc = cfgmod.mpc_config(cfgmod.parse_config({"environment": "car"}), car_env)
    model = AnalyticModel(car_env)
    t0 = time.perf_counter()
    dev, norm = 0.0, 0.0
    for k in range(10):
        s0 = car_env.sample_initial_state(episode_seeds(123, k)[0])
        ideal = run_ideal(car_policy, car_env, s0)
        adapt = run_adapt(car_policy, TargetEnv(car_env), model, mpc, s0)
        dev = max(dev, float(np.max(np.abs(adapt.states - ideal.states))))
        norm = max(norm, abs(adapt.final_normalized - 1.0))
    elapsed = time.perf_counter() - t0
    ok = dev < 1e-8 and norm < 1e-6 and elapsed < 10.0
    acceptance(1, ok, f"max state deviation {dev:.3g} (< 1e-8), max |normalized - 1| {norm:.3g} (< 1e-6), "
                      f"{elapsed:.1f} s (< 10 s)")
    assert ok


def test_criterion_2_solver(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_cost, worst_action = 0.0, 0.0
    for _ in range(50):
        n, m, H = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 7))
        A = np.eye(n) + 0.5 * rng.normal(size=(H, n, n))
        B = rng.normal(size=(H, n, m))
        Q = np.diag(rng.uniform(0.0, 2.0, n))
        R = np.diag(rng.uniform(0.01, 1.0, m))
        args = (A, B, Q, R, rng.normal(size=n), rng.normal(size=(H + 1, n)), rng.normal(size=(H, m)),
                rng.normal(size=(H, n)))
        da, _, cost = solve_tracking_lqr(*args)
        dq, cq = dense_tracking_qp(*args)
        worst_cost = max(worst_cost, abs(cost - cq) / max(abs(cq), 1e-300))
        worst_action = max(worst_action, float(np.max(np.abs(da - dq))))
    elapsed = time.perf_counter() - t0
    ok = worst_cost < 1e-8 and worst_action < 1e-6 and elapsed < 5.0
    acceptance(2, ok, f"cost rel err {worst_cost:.3g} (< 1e-8), action err {worst_action:.3g} (< 1e-6), "
                      f"{elapsed:.2f} s (< 5 s)")
    assert ok


def test_criterion_3_jacobians(acceptance):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        s = rng.uniform([-10, -10, -np.pi, -3, -1], [10, 10, np.pi, 3, 1])
        a = rng.uniform([-2, -0.5], [2, 0.5])
        A, B = car_jacobians(s, a)
        An, Bn = numerical_jacobians(car_derivative, s, a, eps=1e-5)
        J, Jn = np.hstack([A, B]), np.hstack([An, Bn])
        worst = max(worst, float(np.max(np.abs(J - Jn)) / max(1.0, np.max(np.abs(J)))))
    ok = worst < 1e-6
    acceptance(3, ok, f"max relative error {worst:.3g} (< 1e-6) over 100 points")
    assert ok


def test_criterion_4_tube_lower_bound(car_suite, acceptance):
    suite, mpc, _ = car_suite
    steps = fails = 0
    for dist, results in _adapt_results(suite).items():
        for r in results:
            assert not r.diverged
            T = r.horizon
            ds = r.states[:T] - r.nominal.states[:T]
            da = r.actions - r.nominal.actions
            pos = ds[:, mpc.tracked]
            tube = r.mpc_cost >= mpc.q_min * np.sum(pos**2, axis=1) - 1e-9
            act = (r.mpc_cost >= mpc.r_min * np.sum(da**2, axis=1) - 1e-9) | r.saturated
            steps += T
            fails += int(np.sum(~(tube & act)))
    harness_ok = all(rep.tube_ok and rep.action_ok for reps in suite.reports.values() for rep in reps)
    counts = {d: len(v) for d, v in _adapt_results(suite).items()}
    ok = fails == 0 and harness_ok and all(c == EPISODES for c in counts.values())
    acceptance(4, ok, f"{steps - fails}/{steps} steps satisfy both bounds over {sum(counts.values())} episodes")
    assert ok


def test_criterion_5_value_gap_chain(car_suite, acceptance):
    suite, _, _ = car_suite
    total = held = 0
    for results in _adapt_results(suite).values():
        for r in results:
            T = r.horizon
            # left side: realized target value against nominal value on the source
            gap = abs(float(np.sum(r.step_cost)) - float(np.sum(r.baseline_step_cost)))
            # right side: L_r = 2 max ||(x, y, a_v, a_kappa)|| over the visited box
            s = np.abs(np.concatenate([r.states[:T], r.nominal.states[:T]]))
            a = np.abs(np.concatenate([r.actions, r.nominal.actions]))
            L = 2.0 * float(np.linalg.norm(np.concatenate([s[:, :2].max(axis=0), a.max(axis=0)])))
            dev = np.linalg.norm(r.states[:T] - r.nominal.states[:T], axis=1) + \
                np.linalg.norm(r.actions - r.nominal.actions, axis=1)
            total += 1
            held += gap <= L * float(np.sum(dev)) * (1 + 1e-12)
    harness_ok = all(rep.gap_ok for reps in suite.reports.values() for rep in reps)
    ok = total > 0 and held == total and harness_ok
    acceptance(5, ok, f"chain holds on {held}/{total} adapt episodes")
    assert ok


def test_criterion_6_direction(car_suite, acceptance):
    suite, _, elapsed = car_suite
    rows = {(r["disturbance"], r["mode"]): r for r in suite.summary_rows()}
    parts, better, big = [], 0, 0
    for dist in CAR_DISTURBANCES:
        naive, adapt = rows[(dist, "naive")]["mean"], rows[(dist, "adapt")]["mean"]
        ratio = naive / adapt
        better += adapt < naive
        big += ratio >= 1.5
        parts.append(f"{dist} naive {naive:.3f} adapt {adapt:.3f} ratio {ratio:.2f}")
    ok = better == 4 and big >= 2 and elapsed < 900
    acceptance(6, ok, f"adapt better on {better}/4, ratio >= 1.5 on {big}/4 (need 4 and 2), "
                      f"suite {elapsed:.0f} s; " + "; ".join(parts))
    assert ok


def test_criterion_7_arm(arm_policy, acceptance):
    cfg, env, spec, mpc, fit = _setup("arm")
    assert cfgmod.train_config(cfg) == ARM_TRAIN and cfg.train.margin == ARM_MARGIN
    assert cfg.model.kind == "tv-linear"
    suite = run_suite(arm_policy, env, spec, mpc, "tv-linear", fit, EPISODES, cfg.seed)
    rows = {(r["disturbance"], r["mode"]): r for r in suite.summary_rows()}
    parts, ok = [], True
    for dist in ("control_noise", "process_noise"):
        naive, adapt = rows[(dist, "naive")], rows[(dist, "adapt")]
        cond = adapt["mean"] <= naive["mean"] + naive["std_error"]
        ok &= bool(cond) and adapt["episodes"] == EPISODES
        parts.append(f"{dist} adapt {adapt['mean']:.4f} vs naive {naive['mean']:.4f} + {naive['std_error']:.4f}")
    bundles = suite.bundles["param_scale"]
    track = {m: mean_se([b.results[m].tracking_deviation(env) for b in bundles])[0] for m in ("naive", "adapt")}
    ok &= track["adapt"] < track["naive"]
    parts.append(f"mass error tracking adapt {track['adapt']:.4g} vs naive {track['naive']:.4g}")
    acceptance(7, bool(ok), "; ".join(parts))
    assert ok


def test_criterion_8_trend(car_policy, acceptance):
    cfg, env, spec, mpc, fit = _setup("car")
    res = scaling_trend(car_policy, env, spec, mpc, cfg.model.kind, fit, (0.0, 0.5, 1.0, 2.0), EPISODES, cfg.seed)
    zero = res.rows[0].mean_gap
    ok = res.nondecreasing and zero < 1e-6 and all(r.episodes == EPISODES for r in res.rows)
    gaps = ", ".join(f"{r.scale:g}: {r.mean_gap:.4g} +- {r.std_error:.2g}" for r in res.rows)
    acceptance(8, ok, f"mean value gap by scale [{gaps}]; nondecreasing={res.nondecreasing}, gap at 0 = {zero:.3g}")
    assert ok


def test_criterion_9_determinism(car_policy, tmp_path, acceptance):
    policy = tmp_path / "car_policy.bin"
    car_policy.save(policy)
    config = "configs/car.yaml"
    from pathlib import Path
    config = str(Path(__file__).resolve().parents[1] / config)
    outs = [tmp_path / "first", tmp_path / "second"]
    for out in outs:
        assert main(["suite", "--config", config, "--policy", str(policy), "--out", str(out)]) == 0
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    ok = len(names) == 3 and same == names
    acceptance(9, ok, f"{len(same)}/{len(names)} CSVs byte-identical across re-runs ({', '.join(names)})")
    assert ok


def test_criterion_10_linear_fit(acceptance):
    env = ScalarLinearEnv()
    model = fit_tv_linear(env, _scalar_nominal(env), FitConfig(), np.random.default_rng(10))
    err = max(float(np.max(np.abs(model.A - 0.9))), float(np.max(np.abs(model.B - 0.1))))
    ok = err < 1e-8
    acceptance(10, ok, f"max elementwise error of recovered (A, B) {err:.3g} (< 1e-8)")
    assert ok
