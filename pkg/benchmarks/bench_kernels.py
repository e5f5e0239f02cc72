"""Time the compiled kernels against the pure-Python fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is called on the
same inputs under both backends and the best of several repeats is reported.
"""
import argparse
import timeit

import numpy as np

from adapt_transfer import _pykernels

try:
    from adapt_transfer import _ckernels
except ImportError:
    _ckernels = None


def _inputs(rng, horizon=20):
    hills = np.column_stack([rng.uniform(-6, 6, (20, 2)), rng.uniform(1.5, 3.0, 20), rng.uniform(0.05, 0.15, 20)])
    s0 = np.array([0.0, 0.0, 0.3, 1.0, 0.05])
    actions = rng.uniform(-0.5, 0.5, (100, 2))
    gains = np.ones(5)
    n, m = 5, 2
    A = np.eye(n) + 0.1 * rng.normal(size=(horizon, n, n))
    B = 0.1 * rng.normal(size=(horizon, n, m))
    Q = np.diag([1.0, 1.0, 0.0, 0.0, 0.0])
    R = 1e-3 * np.eye(m)
    ds0 = rng.normal(size=n)
    s_off = rng.normal(size=(horizon + 1, n))
    a_off = rng.normal(size=(horizon, m))
    resid = 0.01 * rng.normal(size=(horizon, n))
    return {
        "hill_accel": lambda k: k.hill_accel(0.5, -0.3, 0.8, 0.6, hills),
        "car_rk4": lambda k: k.car_rk4(s0, actions[0], 0.1, gains, hills),
        "car_rollout (100 steps)": lambda k: k.car_rollout(s0, actions, 0.1, gains, hills),
        "lqr_solve (H=20)": lambda k: k.lqr_solve(A, B, Q, R, ds0, s_off, a_off, resid),
    }


def _best(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--number", type=int, default=200)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    cases = _inputs(np.random.default_rng(0))
    print(f"{'kernel':<26}{'python [us]':>14}{'cython [us]':>14}{'speedup':>10}")
    for name, call in cases.items():
        t_py = _best(lambda: call(_pykernels), args.number, args.repeat)
        if _ckernels is None:
            print(f"{name:<26}{t_py * 1e6:>14.1f}{'n/a':>14}{'n/a':>10}")
            continue
        t_c = _best(lambda: call(_ckernels), args.number, args.repeat)
        print(f"{name:<26}{t_py * 1e6:>14.1f}{t_c * 1e6:>14.1f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
