"""Pure-Python/numpy versions of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module. Used when
the extension is not built, or when ``ADAPT_BACKEND=python`` is set.
"""
import math

import numpy as np

GRAVITY = 9.81


def hill_accel(x, y, cos_h, sin_h, hills):
    """Longitudinal acceleration from a field of cosine-bump hills.

    ``hills`` is an (n, 4) array of rows ``[cx, cy, radius, height]``.
    """
    acc = 0.0
    for i in range(hills.shape[0]):
        dx = x - hills[i, 0]
        dy = y - hills[i, 1]
        r = hills[i, 2]
        d = math.sqrt(dx * dx + dy * dy)
        if d < r and d > 1e-12:
            # -dh/dd for h(d) = (height/2)(1 + cos(pi d / r))
            slope = 0.5 * hills[i, 3] * (math.pi / r) * math.sin(math.pi * d / r)
            acc += GRAVITY * slope * (dx * cos_h + dy * sin_h) / d
    return acc


def _car_deriv(s, a, g, hills):
    th = s[2]
    v = s[3]
    c = math.cos(th)
    sn = math.sin(th)
    dv = g[3] * a[0]
    if hills.shape[0]:
        dv += hill_accel(s[0], s[1], c, sn, hills)
    if g[1] != 1.0:
        c = math.cos(g[1] * th)
        sn = math.sin(g[1] * th)
    return (g[0] * v * c, g[0] * v * sn, g[0] * v * g[2] * s[4], dv, g[4] * a[1])


def _car_rk4(s, a, dt, g, hills):
    k1 = _car_deriv(s, a, g, hills)
    s2 = [s[i] + 0.5 * dt * k1[i] for i in range(5)]
    k2 = _car_deriv(s2, a, g, hills)
    s3 = [s[i] + 0.5 * dt * k2[i] for i in range(5)]
    k3 = _car_deriv(s3, a, g, hills)
    s4 = [s[i] + dt * k3[i] for i in range(5)]
    k4 = _car_deriv(s4, a, g, hills)
    return [s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(5)]


def car_rk4(s, a, dt, gains, hills):
    """One RK4 step of the (gain-scaled) kinematic car with hill acceleration."""
    s = [float(v) for v in s]
    a = [float(v) for v in a]
    g = [float(v) for v in gains]
    return np.array(_car_rk4(s, a, dt, g, np.asarray(hills, dtype=float)))


def car_rollout(s0, actions, dt, gains, hills):
    """Open-loop RK4 rollout; returns the (H+1, 5) state array."""
    actions = np.asarray(actions, dtype=float)
    hills = np.asarray(hills, dtype=float)
    g = [float(v) for v in gains]
    out = np.empty((actions.shape[0] + 1, 5))
    s = [float(v) for v in s0]
    out[0] = s
    for k in range(actions.shape[0]):
        s = _car_rk4(s, [float(actions[k, 0]), float(actions[k, 1])], dt, g, hills)
        out[k + 1] = s
    return out


def lqr_solve(A, B, Q, R, ds0, s_off, a_off, resid):
    """Exact minimizer of the affine tracking LQR in deviation coordinates.

    Minimizes ``sum_k (ds_k + s_off_k)' Q (ds_k + s_off_k)`` over k = 0..H plus
    ``sum_k (da_k + a_off_k)' R (da_k + a_off_k)`` over k = 0..H-1, subject to
    ``ds_{k+1} = A_k ds_k + B_k da_k + resid_k`` and a fixed ``ds_0``.

    Returns ``(da, ds, cost)``.
    """
    H, n, m = B.shape
    P = Q.copy()
    p = Q @ s_off[H]
    K = np.empty((H, m, n))
    kff = np.empty((H, m))
    for k in range(H - 1, -1, -1):
        Ak, Bk, ck = A[k], B[k], resid[k]
        PB = P @ Bk
        Huu = R + Bk.T @ PB
        Hux = PB.T @ Ak
        w = P @ ck + p
        hu = R @ a_off[k] + Bk.T @ w
        L = np.linalg.cholesky(Huu)
        sol = np.linalg.solve(L.T, np.linalg.solve(L, np.column_stack([Hux, hu])))
        K[k] = -sol[:, :n]
        kff[k] = -sol[:, n]
        Pn = Q + Ak.T @ P @ Ak + Hux.T @ K[k]
        p = Q @ s_off[k] + Ak.T @ w + Hux.T @ kff[k]
        P = 0.5 * (Pn + Pn.T)
    da = np.empty((H, m))
    ds = np.empty((H + 1, n))
    ds[0] = ds0
    cost = 0.0
    for k in range(H):
        da[k] = K[k] @ ds[k] + kff[k]
        e = ds[k] + s_off[k]
        f = da[k] + a_off[k]
        cost += e @ Q @ e + f @ R @ f
        ds[k + 1] = A[k] @ ds[k] + B[k] @ da[k] + resid[k]
    e = ds[H] + s_off[H]
    cost += e @ Q @ e
    return da, ds, float(cost)
