import numpy as np

from adapt_transfer.costs import ArmCost, CarCost, episode_cost, make_cost, step_costs
from adapt_transfer.dynamics import Trajectory, arm_end_effector
from adapt_transfer.envs import ArmEnv, CarEnv


def test_car_cost_example():
    assert CarCost().step_cost([1.0, 2.0, 0, 0, 0], [1.0, 0.5]) == 6.25


def test_car_cost_zero_at_origin_rest():
    assert CarCost().step_cost(np.zeros(5), np.zeros(2)) == 0.0


def test_car_cost_is_vectorized():
    s = np.array([[1.0, 0, 0, 0, 0], [0, 2.0, 0, 0, 0]])
    assert np.array_equal(CarCost().step_cost(s, np.zeros((2, 2))), [1.0, 4.0])


def test_arm_cost_zero_at_goal_without_torque():
    env = ArmEnv()
    cost = make_cost(env)
    assert isinstance(cost, ArmCost)
    # find the configuration reaching the goal by brute force over a grid
    q = np.linspace(-np.pi, np.pi, 721)
    Q1, Q2 = np.meshgrid(q, q)
    states = np.stack([Q1.ravel(), Q2.ravel(), 0 * Q1.ravel(), 0 * Q1.ravel()], axis=1)
    best = states[np.argmin(cost.step_cost(states, np.zeros((len(states), 2))))]
    assert np.linalg.norm(arm_end_effector(best, env.params) - np.asarray(env.goal)) < 1e-3


def test_episode_cost_sums_steps():
    states = np.array([[1.0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0], [0, 0, 0, 0, 0]])
    actions = np.array([[1.0, 0], [0, 0]])
    traj = Trajectory(states, actions, 0.1)
    assert np.array_equal(step_costs(traj, CarCost()), [2.0, 1.0])
    assert episode_cost(traj, CarCost()) == 3.0
    assert episode_cost(Trajectory(states[:1], actions[:0], 0.1), CarCost()) == 0.0


def test_lipschitz_bounds_sampled_differences():
    rng = np.random.default_rng(0)
    for cost, env in ((CarCost(), CarEnv()), (make_cost(ArmEnv()), ArmEnv())):
        n = env.state_dim
        s = rng.uniform(-2, 2, (200, n))
        a = rng.uniform(-1, 1, (200, 2))
        L = cost.lipschitz(s, a)
        i, j = rng.integers(0, 200, (2, 500))
        diff = np.abs(cost.step_cost(s[i], a[i]) - cost.step_cost(s[j], a[j]))
        dist = np.linalg.norm(np.hstack([s[i] - s[j], a[i] - a[j]]), axis=1)
        mask = dist > 0
        assert np.all(diff[mask] <= L * dist[mask] + 1e-12)
