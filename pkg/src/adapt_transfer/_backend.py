"""Selects the kernel implementation at import time.

The compiled extension is used when importable; ``ADAPT_BACKEND=python``
forces the numpy fallback (used by the benchmark and the parity tests).
"""
import os

from . import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("ADAPT_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        kernels = _ckernels
        BACKEND = "cython"

car_rk4 = kernels.car_rk4
car_rollout = kernels.car_rollout
lqr_solve = kernels.lqr_solve
hill_accel = kernels.hill_accel
