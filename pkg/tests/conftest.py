from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pytest

from adapt_transfer import costs as costs_mod, envs as envs_mod, policy as policy_mod
from adapt_transfer.costs import make_cost
from adapt_transfer.envs import ArmEnv, CarEnv
from adapt_transfer.policy import PolicyParams, TrainConfig, bound_set, init_params, train_policy

CAR_TRAIN = TrainConfig()
CAR_MARGIN = 0.1
ARM_TRAIN = TrainConfig(iterations=150, rollouts=1)
ARM_MARGIN = 0.0


def _cached_policy(request, env, cfg, margin, name):
    """Training is deterministic, so the result is cached across sessions
    keyed by the training config and the trainer source."""
    h = hashlib.sha256(repr((cfg, margin)).encode())
    for mod in (policy_mod, envs_mod, costs_mod):
        h.update(Path(mod.__file__).read_bytes())
    key = f"{name}-{h.hexdigest()[:16]}"
    cache_dir = request.config.cache.mkdir("adapt-policies")
    path = cache_dir / f"{key}.bin"
    if path.exists():
        return PolicyParams.load(path)
    policy = train_policy(env, make_cost(env), cfg, bound_set(env.state_space, env.action_space, margin))
    policy.save(path)
    return policy


@pytest.fixture(scope="session")
def car_env():
    return CarEnv()


@pytest.fixture(scope="session")
def arm_env():
    return ArmEnv()


@pytest.fixture(scope="session")
def car_policy(request, car_env):
    return _cached_policy(request, car_env, CAR_TRAIN, CAR_MARGIN, "car")


@pytest.fixture(scope="session")
def arm_policy(request, arm_env):
    return _cached_policy(request, arm_env, ARM_TRAIN, ARM_MARGIN, "arm")


@pytest.fixture
def small_car_policy(car_env):
    """Untrained but non-trivial policy for fast mechanical tests."""
    sizes = (car_env.feature_dim, 64, 64, car_env.action_dim)
    flat = init_params(sizes, np.random.default_rng(3), output_scale=0.5)
    return PolicyParams("car", sizes, flat, car_env.action_space)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; printed at the end."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
