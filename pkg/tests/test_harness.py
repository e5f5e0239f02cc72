import numpy as np
import pytest

from adapt_transfer.costs import make_cost
from adapt_transfer.disturbances import DivergenceError, TargetEnv
from adapt_transfer.dynamics import ContractError
from adapt_transfer.harness import (
    EPISODE_COLUMNS,
    DisturbanceSpec,
    EpisodeTask,
    TrendResult,
    TrendRow,
    build_target,
    episode_rows,
    episode_seeds,
    fmt,
    run_adapt,
    run_ideal,
    run_naive,
    run_tasks,
    to_csv,
    verify_episode,
)
from adapt_transfer.models import AnalyticModel, FitConfig
from adapt_transfer.mpc import default_mpc_config
from adapt_transfer.policy import rollout_nominal


def _start(env, k=0):
    rng, _ = episode_seeds(0, k)
    return env.sample_initial_state(rng)


def test_ideal_normalized_is_one(small_car_policy, car_env):
    res = run_ideal(small_car_policy, car_env, _start(car_env))
    assert np.array_equal(res.normalized, np.ones(car_env.horizon))
    assert res.final_normalized == 1.0 and res.value_gap == 0.0


def test_naive_without_disturbance_equals_ideal(small_car_policy, car_env):
    s0 = _start(car_env)
    ideal = run_ideal(small_car_policy, car_env, s0)
    naive = run_naive(small_car_policy, TargetEnv(car_env), s0)
    assert np.array_equal(naive.states, ideal.states)
    assert np.allclose(naive.normalized, 1.0, atol=1e-12)


def test_adapt_without_disturbance_stays_on_nominal(small_car_policy, car_env):
    s0 = _start(car_env, 3)
    res = run_adapt(small_car_policy, TargetEnv(car_env), AnalyticModel(car_env), default_mpc_config(car_env), s0)
    assert np.max(np.abs(res.states - res.nominal.states)) < 1e-8
    assert abs(res.final_normalized - 1.0) < 1e-6
    assert np.all(res.mpc_cost == 0.0) and np.all(res.iterations == 1)


def test_series_lengths(small_car_policy, car_env):
    res = run_naive(small_car_policy, TargetEnv(car_env), _start(car_env))
    T = car_env.horizon
    for series in (res.step_cost, res.cum_cost, res.baseline_cum_cost, res.normalized, res.mpc_cost,
                   res.saturated, res.iterations):
        assert len(series) == T


class _FailingTarget:
    def __init__(self, env, at):
        self.source, self.active, self.at = env, ["process_noise"], at

    def step(self, s, a, t):
        if t == self.at:
            raise DivergenceError(t + 1)
        return self.source.step(s, a)


def test_divergence_is_recorded(small_car_policy, car_env):
    res = run_naive(small_car_policy, _FailingTarget(car_env, 4), _start(car_env))
    assert res.diverged and res.diverged_at == 5
    with pytest.raises(ContractError):
        verify_episode(res, make_cost(car_env), default_mpc_config(car_env))


def test_episode_seeds_are_paired_and_distinct():
    a_rng, a_ss = episode_seeds(3, 1)
    b_rng, b_ss = episode_seeds(3, 1)
    c_rng, _ = episode_seeds(3, 2)
    assert a_rng.random() == b_rng.random() != c_rng.random()
    assert np.array_equal(a_ss.generate_state(4), b_ss.generate_state(4))


def test_build_target_is_repeatable(car_env):
    spec = DisturbanceSpec(active=("hills", "control_noise", "process_noise", "param_scale"))
    _, ss = episode_seeds(0, 5)
    a, b = build_target(car_env, spec, ss), build_target(car_env, spec, ss)
    assert np.array_equal(a.hills.hills, b.hills.hills)
    assert np.array_equal(a.process_noise_at(17), b.process_noise_at(17))
    assert np.array_equal(a.control_noise_at(17), b.control_noise_at(17))
    assert a.active == ["hills", "control_noise", "process_noise", "param_scale"]


def test_build_target_rejects_unknown_type(car_env):
    with pytest.raises(ContractError):
        build_target(car_env, DisturbanceSpec(active=("wind",)), np.random.SeedSequence(0))


def test_naive_and_adapt_see_same_disturbance(small_car_policy, car_env):
    spec = DisturbanceSpec(active=("process_noise",))
    (bundle,) = run_tasks([EpisodeTask(small_car_policy, car_env, spec, default_mpc_config(car_env),
                                       "analytic", FitConfig(), 0, 2)])
    naive, adapt = bundle.results["naive"], bundle.results["adapt"]
    assert np.array_equal(naive.states[0], adapt.states[0])
    assert np.array_equal(naive.baseline_step_cost, adapt.baseline_step_cost)
    target = build_target(car_env, spec, episode_seeds(0, 2)[1])
    w = adapt.states[1] - car_env.step(adapt.states[0], adapt.actions[0])
    assert np.allclose(w, target.process_noise_at(0), atol=1e-14)


def test_parallel_tasks_match_serial(small_car_policy, car_env):
    spec = DisturbanceSpec(active=("control_noise",))
    tasks = [EpisodeTask(small_car_policy, car_env, spec, default_mpc_config(car_env), "analytic",
                         FitConfig(), 1, k) for k in range(3)]
    serial = run_tasks(tasks, 1)
    parallel = run_tasks(tasks, 2)
    for a, b in zip(serial, parallel):
        assert a.episode == b.episode
        assert np.array_equal(a.results["adapt"].states, b.results["adapt"].states)


def test_verification_on_clean_episode(small_car_policy, car_env):
    cfg = default_mpc_config(car_env)
    res = run_adapt(small_car_policy, TargetEnv(car_env), AnalyticModel(car_env), cfg, _start(car_env))
    rep = verify_episode(res, make_cost(car_env), cfg)
    assert rep.passed and rep.gap == 0.0 and rep.gap_bound == 0.0


def test_trend_monotonicity_rule():
    def trend(means, se=0.1):
        return TrendResult([TrendRow(i, m, se, 10, 1.0) for i, m in enumerate(means)], 100)

    assert trend([0.0, 1.0, 2.0, 3.0]).nondecreasing
    assert trend([0.0, 1.0, 0.95, 3.0]).nondecreasing
    assert not trend([0.0, 1.0, 0.5, 3.0]).nondecreasing
    assert not trend([0.0, 1.0, 0.95, 0.9]).nondecreasing


def test_fmt_and_csv():
    assert fmt(0.1) == "0.1" and fmt(1 / 3) == "0.333333333" and fmt(True) == "1" and fmt(np.int64(4)) == "4"
    assert fmt(float("nan")) == "nan"
    text = to_csv([{"a": 1, "b": 2.5}], ("a", "b"))
    assert text == "a,b\n1,2.5\n"


def test_episode_rows_columns(small_car_policy, car_env):
    res = run_ideal(small_car_policy, car_env, _start(car_env))
    rows = episode_rows(res)
    assert len(rows) == car_env.horizon and tuple(rows[0]) == EPISODE_COLUMNS
    assert rows[-1]["normalized"] == 1.0


def test_arm_adapt_tracks_nominal_without_disturbance(arm_policy, arm_env):
    s0 = arm_env.sample_initial_state(np.random.default_rng(0))
    nominal = rollout_nominal(arm_policy, arm_env, s0)
    res = run_adapt(arm_policy, TargetEnv(arm_env), AnalyticModel(arm_env), default_mpc_config(arm_env), s0,
                    nominal=nominal)
    assert np.max(np.abs(res.states - nominal.states)) < 1e-8
