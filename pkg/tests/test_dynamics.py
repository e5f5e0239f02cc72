import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adapt_transfer.dynamics import (
    CAR_ACTION_SPACE,
    ArmParams,
    BoxSpace,
    ConfigurationError,
    ContractError,
    LinearizedStep,
    NumericOverflowError,
    Trajectory,
    arm_derivative,
    arm_kinetic_energy,
    car_derivative,
    car_jacobians,
    clamp_action,
    discretize_jacobians,
    integrate_step,
    numerical_jacobians,
)

from oracles import arm_mass_matrix_scalar, car_derivative_scalar

finite = st.floats(-10, 10, allow_nan=False)


def test_car_derivative_straight_line():
    assert np.array_equal(car_derivative([0, 0, 0, 1, 0], [0, 0]), [1, 0, 0, 0, 0])


def test_car_derivative_quarter_turn():
    d = car_derivative([0, 0, math.pi / 2, 2, 0.5], [1, -0.2])
    assert np.allclose(d, [0, 2, 1, 1, -0.2], atol=1e-12)


def test_car_derivative_matches_scalar_evaluation():
    s, a = [3, -1, math.pi, 1.5, 0.1], [0.5, 0.3]
    d = car_derivative(s, a)
    assert np.allclose(d, car_derivative_scalar(s, a), atol=1e-12)
    assert np.allclose(d, [-1.5, 0.0, 0.15, 0.5, 0.3], atol=1e-12)


def test_car_derivative_rejects_wrong_dimension():
    with pytest.raises(ContractError):
        car_derivative([0, 0, 0, 1], [0, 0])


def test_car_jacobians_at_unit_speed():
    A, B = car_jacobians(np.array([0, 0, 0, 1.0, 0]), np.zeros(2))
    assert A[0, 2] == 0 and A[1, 2] == 1 and A[0, 3] == 1 and A[2, 4] == 1
    expected_B = np.zeros((5, 2))
    expected_B[3, 0] = expected_B[4, 1] = 1
    assert np.array_equal(B, expected_B)


def test_car_jacobians_nonzero_pattern():
    rng = np.random.default_rng(0)
    A, _ = car_jacobians(rng.normal(size=5), rng.normal(size=2))
    assert np.all(A[3:] == 0)


def test_car_jacobians_match_central_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s = rng.uniform([-5, -5, -np.pi, -3, -1], [5, 5, np.pi, 3, 1])
        a = rng.uniform(-1, 1, 2)
        A, B = car_jacobians(s, a)
        An, Bn = numerical_jacobians(car_derivative, s, a, eps=1e-5)
        scale = max(1.0, np.abs(A).max())
        assert np.max(np.abs(A - An)) / scale < 1e-6
        assert np.max(np.abs(B - Bn)) < 1e-6


def test_arm_at_rest_is_equilibrium():
    p = ArmParams(damping=0.0)
    assert np.array_equal(arm_derivative([0, 0, 0, 0], [0, 0], p), np.zeros(4))


def test_arm_acceleration_solves_mass_matrix_system():
    d = arm_derivative([0, math.pi / 2, 0, 0], [1, 0], ArmParams(damping=0.0))
    M = arm_mass_matrix_scalar(math.pi / 2)
    assert np.allclose(d[2:], np.linalg.solve(M, [1.0, 0.0]), rtol=1e-12)


def test_arm_energy_conserved_without_torque_or_damping():
    p = ArmParams(damping=0.0)
    s = np.array([0.3, 1.2, 2.0, -3.0])
    e0 = arm_kinetic_energy(s, p)
    for _ in range(100):
        s = integrate_step(lambda x, u: arm_derivative(x, u, p), s, np.zeros(2), 0.01)
    assert abs(arm_kinetic_energy(s, p) - e0) < 1e-5


def test_arm_rejects_non_positive_mass():
    with pytest.raises(ConfigurationError):
        ArmParams(m1=0.0)


def test_euler_constant_velocity():
    out = integrate_step(car_derivative, np.array([0, 0, 0, 1.0, 0]), np.zeros(2), 0.1, "euler")
    assert np.allclose(out, [0.1, 0, 0, 1, 0])


def test_rk4_on_exponential():
    out = integrate_step(lambda s, a: s, np.array([1.0]), None, 0.1)
    assert abs(out[0] - 1.105170833) < 1e-7
    assert abs(out[0] - math.exp(0.1)) < 1e-7


def test_rk4_keeps_speed_and_curvature_without_controls():
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = rng.normal(size=5)
        s[4] = 0.0
        out = integrate_step(car_derivative, s, np.zeros(2), 0.1)
        assert out[3] == s[3] and out[4] == s[4]


def test_integrate_step_is_bit_deterministic():
    s, a = np.array([1.0, 2, 0.3, 1.5, 0.1]), np.array([0.2, -0.1])
    assert np.array_equal(integrate_step(car_derivative, s, a, 0.1), integrate_step(car_derivative, s, a, 0.1))


def test_integrate_step_raises_on_overflow():
    with pytest.raises(NumericOverflowError):
        integrate_step(lambda s, a: s * 1e308, np.array([1e10]), None, 1.0)


def test_integrate_step_rejects_bad_dt_and_method():
    with pytest.raises(ContractError):
        integrate_step(car_derivative, np.zeros(5), np.zeros(2), 0.0)
    with pytest.raises(ContractError):
        integrate_step(car_derivative, np.zeros(5), np.zeros(2), 0.1, "midpoint")


def test_discretize_zero_jacobian_is_identity():
    step = discretize_jacobians(np.zeros((3, 3)), np.zeros((3, 1)), 0.1)
    assert np.array_equal(step.A, np.eye(3))


def test_discretize_car_entries():
    A, B = car_jacobians(np.array([0, 0, 0, 1.0, 0]), np.zeros(2))
    step = discretize_jacobians(A, B, 0.1)
    assert math.isclose(step.A[1, 2], 0.1) and math.isclose(step.B[3, 0], 0.1)


def test_first_order_discretization_error_is_second_order_in_dt():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = rng.uniform([-5, -5, -np.pi, -2, -0.5], [5, 5, np.pi, 2, 0.5])
        a = rng.uniform(-1, 1, 2)
        Ac, Bc = car_jacobians(s, a)
        errs = []
        for dt in (0.1, 0.05):
            step = discretize_jacobians(Ac, Bc, dt)
            exact, _ = numerical_jacobians(lambda x, u: integrate_step(car_derivative, x, u, dt), s, a, eps=1e-6)
            errs.append(np.abs(step.A - exact).max())
        assert errs[0] < 0.05
        assert errs[1] < 0.3 * errs[0] + 1e-8


def test_linearized_step_shapes():
    with pytest.raises(ContractError):
        LinearizedStep(np.eye(3), np.zeros((2, 1)))
    step = LinearizedStep(np.eye(2), np.ones((2, 1)))
    assert np.array_equal(step.predict(np.ones(2), np.ones(1)), [2.0, 2.0])


def test_trajectory_shape_contract():
    Trajectory(np.zeros((1, 5)), np.zeros((0, 2)), 0.1)
    with pytest.raises(ContractError):
        Trajectory(np.zeros((3, 5)), np.zeros((3, 2)), 0.1)


def test_clamp_action_examples():
    assert np.array_equal(clamp_action([3, 0], CAR_ACTION_SPACE), [2, 0])
    assert np.array_equal(clamp_action([1.0, 0.25], CAR_ACTION_SPACE), [1.0, 0.25])
    assert np.array_equal(clamp_action([-5, -5], CAR_ACTION_SPACE), [-2, -0.5])


@given(st.lists(finite, min_size=2, max_size=2))
def test_clamp_is_idempotent(a):
    once = clamp_action(a, CAR_ACTION_SPACE)
    assert np.array_equal(clamp_action(once, CAR_ACTION_SPACE), once)
    assert CAR_ACTION_SPACE.contains(once)


@settings(max_examples=50)
@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_car_jacobian_property(s, a):
    A, B = car_jacobians(np.array(s), np.array(a))
    An, Bn = numerical_jacobians(car_derivative, np.array(s), np.array(a), eps=1e-5)
    assert np.allclose(A, An, atol=1e-6 * max(1.0, np.abs(A).max()))
    assert np.allclose(B, Bn, atol=1e-8)


def test_box_rejects_inverted_bounds():
    with pytest.raises(ContractError):
        BoxSpace(np.array([1.0]), np.array([0.0]))
