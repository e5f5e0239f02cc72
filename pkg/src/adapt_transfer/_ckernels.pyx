# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: car RK4 integration with hills, and the tracking-LQR
backward/forward pass. Mirrors ``_pykernels`` exactly in semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, M_PI

cnp.import_array()

cdef double GRAVITY = 9.81


cdef double _hill_accel(double x, double y, double cos_h, double sin_h,
                        const double[:, ::1] hills) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0, dx, dy, r, d, slope
    for i in range(hills.shape[0]):
        dx = x - hills[i, 0]
        dy = y - hills[i, 1]
        r = hills[i, 2]
        d = sqrt(dx * dx + dy * dy)
        if d < r and d > 1e-12:
            slope = 0.5 * hills[i, 3] * (M_PI / r) * sin(M_PI * d / r)
            acc += GRAVITY * slope * (dx * cos_h + dy * sin_h) / d
    return acc


cdef void _car_deriv(const double* s, const double* a, const double* g,
                     const double[:, ::1] hills, double* out) noexcept nogil:
    cdef double th = s[2], v = s[3]
    cdef double c = cos(th), sn = sin(th)
    cdef double dv = g[3] * a[0]
    if hills.shape[0]:
        dv += _hill_accel(s[0], s[1], c, sn, hills)
    if g[1] != 1.0:
        c = cos(g[1] * th)
        sn = sin(g[1] * th)
    out[0] = g[0] * v * c
    out[1] = g[0] * v * sn
    out[2] = g[0] * v * g[2] * s[4]
    out[3] = dv
    out[4] = g[4] * a[1]


cdef void _car_rk4(const double* s, const double* a, double dt, const double* g,
                   const double[:, ::1] hills, double* out) noexcept nogil:
    cdef double k1[5]
    cdef double k2[5]
    cdef double k3[5]
    cdef double k4[5]
    cdef double tmp[5]
    cdef int i
    _car_deriv(s, a, g, hills, k1)
    for i in range(5):
        tmp[i] = s[i] + 0.5 * dt * k1[i]
    _car_deriv(tmp, a, g, hills, k2)
    for i in range(5):
        tmp[i] = s[i] + 0.5 * dt * k2[i]
    _car_deriv(tmp, a, g, hills, k3)
    for i in range(5):
        tmp[i] = s[i] + dt * k3[i]
    _car_deriv(tmp, a, g, hills, k4)
    for i in range(5):
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def hill_accel(double x, double y, double cos_h, double sin_h, hills):
    cdef const double[:, ::1] h = np.ascontiguousarray(hills, dtype=np.float64)
    return _hill_accel(x, y, cos_h, sin_h, h)


def car_rk4(s, a, double dt, gains, hills):
    cdef double[::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(gains, dtype=np.float64)
    cdef const double[:, ::1] h = np.ascontiguousarray(hills, dtype=np.float64).reshape(-1, 4)
    out = np.empty(5)
    cdef double[::1] ov = out
    _car_rk4(&sv[0], &av[0], dt, &gv[0], h, &ov[0])
    return out


def car_rollout(s0, actions, double dt, gains, hills):
    cdef const double[:, ::1] act = np.ascontiguousarray(actions, dtype=np.float64).reshape(-1, 2)
    cdef double[::1] gv = np.ascontiguousarray(gains, dtype=np.float64)
    cdef const double[:, ::1] h = np.ascontiguousarray(hills, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t H = act.shape[0], k, i
    out = np.empty((H + 1, 5))
    cdef double[:, ::1] ov = out
    cdef double[::1] sv = np.ascontiguousarray(s0, dtype=np.float64)
    for i in range(5):
        ov[0, i] = sv[i]
    with nogil:
        for k in range(H):
            _car_rk4(&ov[k, 0], &act[k, 0], dt, &gv[0], h, &ov[k + 1, 0])
    return out


cdef int _cholesky_solve(double[:, ::1] M, double[:, ::1] rhs, Py_ssize_t m,
                         Py_ssize_t ncol) noexcept nogil:
    """In-place Cholesky of M (m x m) then solve M X = rhs (m x ncol) into rhs."""
    cdef Py_ssize_t i, j, k, c
    cdef double acc
    for j in range(m):
        acc = M[j, j]
        for k in range(j):
            acc -= M[j, k] * M[j, k]
        if acc <= 0.0:
            return -1
        M[j, j] = sqrt(acc)
        for i in range(j + 1, m):
            acc = M[i, j]
            for k in range(j):
                acc -= M[i, k] * M[j, k]
            M[i, j] = acc / M[j, j]
    for c in range(ncol):
        for i in range(m):
            acc = rhs[i, c]
            for k in range(i):
                acc -= M[i, k] * rhs[k, c]
            rhs[i, c] = acc / M[i, i]
        for i in range(m - 1, -1, -1):
            acc = rhs[i, c]
            for k in range(i + 1, m):
                acc -= M[k, i] * rhs[k, c]
            rhs[i, c] = acc / M[i, i]
    return 0


def lqr_solve(A, B, Q, R, ds0, s_off, a_off, resid):
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[::1] d0 = np.ascontiguousarray(ds0, dtype=np.float64)
    cdef const double[:, ::1] so = np.ascontiguousarray(s_off, dtype=np.float64)
    cdef const double[:, ::1] ao = np.ascontiguousarray(a_off, dtype=np.float64)
    cdef const double[:, ::1] rv = np.ascontiguousarray(resid, dtype=np.float64)
    cdef Py_ssize_t H = Bv.shape[0], n = Bv.shape[1], m = Bv.shape[2]
    cdef Py_ssize_t k, i, j, l
    cdef double acc, cost = 0.0

    Karr = np.empty((H, m, n))
    karr = np.empty((H, m))
    cdef double[:, :, ::1] K = Karr
    cdef double[:, ::1] kff = karr
    cdef double[:, ::1] P = np.array(Qv, dtype=np.float64)
    cdef double[:, ::1] Pn = np.empty((n, n))
    cdef double[::1] p = np.empty(n)
    cdef double[::1] w = np.empty(n)
    cdef double[:, ::1] PB = np.empty((n, m))
    cdef double[:, ::1] PA = np.empty((n, n))
    cdef double[:, ::1] Huu = np.empty((m, m))
    cdef double[:, ::1] rhs = np.empty((m, n + 1))
    cdef int status = 0

    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += Qv[i, j] * so[H, j]
            p[i] = acc
        for k in range(H - 1, -1, -1):
            # PB = P B_k, PA = P A_k, w = P c_k + p
            for i in range(n):
                for j in range(m):
                    acc = 0.0
                    for l in range(n):
                        acc += P[i, l] * Bv[k, l, j]
                    PB[i, j] = acc
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += P[i, l] * Av[k, l, j]
                    PA[i, j] = acc
                acc = p[i]
                for l in range(n):
                    acc += P[i, l] * rv[k, l]
                w[i] = acc
            # Huu = R + B' P B; rhs = [B' P A | R a_off + B' w]
            for i in range(m):
                for j in range(m):
                    acc = Rv[i, j]
                    for l in range(n):
                        acc += Bv[k, l, i] * PB[l, j]
                    Huu[i, j] = acc
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += Bv[k, l, i] * PA[l, j]
                    rhs[i, j] = acc
                acc = 0.0
                for j in range(m):
                    acc += Rv[i, j] * ao[k, j]
                for l in range(n):
                    acc += Bv[k, l, i] * w[l]
                rhs[i, n] = acc
            # K and kff from the factorised system; rhs keeps Hux/hu copies
            for i in range(m):
                for j in range(n):
                    K[k, i, j] = rhs[i, j]
                kff[k, i] = rhs[i, n]
            if _cholesky_solve(Huu, rhs, m, n + 1) != 0:
                status = -1
                break
            # Pn = Q + A' P A + Hux' K ; p = Q s_off + A' w + Hux' kff
            for i in range(n):
                for j in range(n):
                    acc = Qv[i, j]
                    for l in range(n):
                        acc += Av[k, l, i] * PA[l, j]
                    for l in range(m):
                        acc -= K[k, l, i] * rhs[l, j]
                    Pn[i, j] = acc
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += Qv[i, j] * so[k, j]
                for l in range(n):
                    acc += Av[k, l, i] * w[l]
                for l in range(m):
                    acc -= K[k, l, i] * rhs[l, n]
                p[i] = acc
            for i in range(m):
                for j in range(n):
                    K[k, i, j] = -rhs[i, j]
                kff[k, i] = -rhs[i, n]
            for i in range(n):
                for j in range(n):
                    P[i, j] = 0.5 * (Pn[i, j] + Pn[j, i])
    if status != 0:
        raise np.linalg.LinAlgError("control Hessian R + B'PB is not positive definite")

    da_arr = np.empty((H, m))
    ds_arr = np.empty((H + 1, n))
    cdef double[:, ::1] da = da_arr
    cdef double[:, ::1] ds = ds_arr
    cdef double[::1] e = np.empty(n)
    cdef double[::1] f = np.empty(m)
    with nogil:
        for i in range(n):
            ds[0, i] = d0[i]
        for k in range(H):
            for i in range(m):
                acc = kff[k, i]
                for j in range(n):
                    acc += K[k, i, j] * ds[k, j]
                da[k, i] = acc
            for i in range(n):
                e[i] = ds[k, i] + so[k, i]
            for i in range(m):
                f[i] = da[k, i] + ao[k, i]
            for i in range(n):
                for j in range(n):
                    cost += e[i] * Qv[i, j] * e[j]
            for i in range(m):
                for j in range(m):
                    cost += f[i] * Rv[i, j] * f[j]
            for i in range(n):
                acc = rv[k, i]
                for j in range(n):
                    acc += Av[k, i, j] * ds[k, j]
                for j in range(m):
                    acc += Bv[k, i, j] * da[k, j]
                ds[k + 1, i] = acc
        for i in range(n):
            e[i] = ds[H, i] + so[H, i]
        for i in range(n):
            for j in range(n):
                cost += e[i] * Qv[i, j] * e[j]
    return da_arr, ds_arr, cost
