import numpy as np
import pytest

from adapt_transfer import _backend, _pykernels
from adapt_transfer.dynamics import car_derivative, integrate_step

from oracles import dense_tracking_qp

ckernels = pytest.importorskip("adapt_transfer._ckernels")

HILLS = np.array([[1.0, 0.5, 2.0, 0.2], [-2.0, 3.0, 1.0, 0.1], [0.0, -1.0, 1.5, 0.3]])


def test_backend_is_selected():
    assert _backend.BACKEND in ("cython", "python")


@pytest.mark.parametrize("hills", [np.zeros((0, 4)), HILLS])
def test_car_step_parity(hills):
    rng = np.random.default_rng(0)
    gains = np.array([1.0, 1.0, 1.0, 1.2, 0.8])
    for _ in range(50):
        s = rng.uniform(-3, 3, 5)
        a = rng.uniform(-1, 1, 2)
        c = ckernels.car_rk4(s, a, 0.1, gains, hills)
        p = _pykernels.car_rk4(s, a, 0.1, gains, hills)
        assert np.allclose(c, p, rtol=1e-13, atol=1e-13)


def test_car_step_matches_generic_rk4_without_hills():
    s, a = np.array([1.0, -2.0, 0.4, 1.5, 0.2]), np.array([0.3, -0.1])
    ref = integrate_step(car_derivative, s, a, 0.1)
    for k in (ckernels, _pykernels):
        assert np.allclose(k.car_rk4(s, a, 0.1, np.ones(5), np.zeros((0, 4))), ref, atol=1e-14)


def test_rollout_parity():
    rng = np.random.default_rng(1)
    s0 = rng.uniform(-3, 3, 5)
    actions = rng.uniform(-1, 1, (100, 2))
    c = ckernels.car_rollout(s0, actions, 0.1, np.ones(5), HILLS)
    p = _pykernels.car_rollout(s0, actions, 0.1, np.ones(5), HILLS)
    assert c.shape == (101, 5)
    assert np.allclose(c, p, rtol=1e-10, atol=1e-10)


def test_hill_accel_parity():
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, y, th = rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-np.pi, np.pi)
        c = ckernels.hill_accel(x, y, np.cos(th), np.sin(th), HILLS)
        p = _pykernels.hill_accel(x, y, np.cos(th), np.sin(th), HILLS)
        assert abs(c - p) < 1e-12


def _random_lqr(rng, H=8, n=4, m=2):
    A = np.eye(n) + 0.1 * rng.normal(size=(H, n, n))
    B = 0.1 * rng.normal(size=(H, n, m))
    Q = np.diag(rng.uniform(0.1, 2.0, n))
    R = np.diag(rng.uniform(0.01, 1.0, m))
    return A, B, Q, R, rng.normal(size=n), rng.normal(size=(H + 1, n)), rng.normal(size=(H, m)), \
        0.1 * rng.normal(size=(H, n))


def test_lqr_parity_and_dense_agreement():
    rng = np.random.default_rng(3)
    for _ in range(10):
        args = _random_lqr(rng)
        dc, sc, jc = ckernels.lqr_solve(*args)
        dp, sp, jp = _pykernels.lqr_solve(*args)
        dq, jq = dense_tracking_qp(*args)
        assert np.allclose(dc, dp, atol=1e-10) and np.allclose(sc, sp, atol=1e-10)
        assert abs(jc - jp) <= 1e-10 * max(1.0, abs(jp))
        assert np.allclose(dc, dq, atol=1e-8)
