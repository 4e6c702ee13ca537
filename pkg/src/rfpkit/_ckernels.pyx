# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_pykernels`` one-to-one."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log, sqrt, sin, cos, pow, round, floor, INFINITY, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double _LOG_2PI = log(2.0 * M_PI)


cdef double _row_lse(const double[:, ::1] pts, const double[::1] q, Py_ssize_t skip,
                     double inv2h2) noexcept nogil:
    cdef Py_ssize_t n = pts.shape[0], d = pts.shape[1], k, j
    cdef double peak = -INFINITY, acc = 0.0, s, diff, e
    for k in range(n):
        if k == skip:
            continue
        s = 0.0
        for j in range(d):
            diff = q[j] - pts[k, j]
            s += diff * diff
        e = -s * inv2h2
        if e > peak:
            peak = e
    if peak == -INFINITY:
        return -INFINITY
    for k in range(n):
        if k == skip:
            continue
        s = 0.0
        for j in range(d):
            diff = q[j] - pts[k, j]
            s += diff * diff
        acc += exp(-s * inv2h2 - peak)
    return peak + log(acc)


def loo_loglik(points, double h):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0], d = pts.shape[1], i
    cdef double inv2h2 = 0.5 / (h * h)
    cdef double total = 0.0
    cdef double log_norm = -log(<double>(n - 1)) - d * log(h) - 0.5 * d * _LOG_2PI
    rows = np.empty(n, dtype=np.float64)
    cdef double[::1] r = rows
    for i in prange(n, nogil=True, schedule="static"):
        r[i] = _row_lse(pts, pts[i], i, inv2h2)
    # serial sum keeps the result independent of the thread count
    for i in range(n):
        total = total + r[i]
    return total + n * log_norm


def kde_logpdf(points, queries, double h):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] qs = np.ascontiguousarray(queries, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0], d = pts.shape[1], m = qs.shape[0], i
    cdef double inv2h2 = 0.5 / (h * h)
    cdef double log_norm = -log(<double>n) - d * log(h) - 0.5 * d * _LOG_2PI
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    for i in prange(m, nogil=True, schedule="static"):
        o[i] = _row_lse(pts, qs[i], -1, inv2h2) + log_norm
    return out


cdef inline void _leader_state(double t, double x0, double v0, double dv, double td,
                               double* x, double* v) noexcept nogil:
    cdef double w, x_end
    if td <= 0.0:
        x[0] = x0 + v0 * t
        v[0] = v0
    elif t >= td:
        x_end = x0 + v0 * td - 0.5 * dv * td
        x[0] = x_end + (v0 - dv) * (t - td)
        v[0] = v0 - dv
    else:
        w = M_PI / td
        x[0] = x0 + v0 * t - 0.5 * dv * (t - sin(w * t) / w)
        v[0] = v0 - 0.5 * dv * (1.0 - cos(w * t))


cdef inline bint _perceived(Py_ssize_t n_ref, Py_ssize_t lag, double frac, double* gap_hist,
                            double* vl_hist, bint pre_visible, double* pgap, double* pvl) noexcept nogil:
    cdef Py_ssize_t m = n_ref - lag
    if m >= 1:
        pgap[0] = gap_hist[m] - frac * (gap_hist[m] - gap_hist[m - 1])
        pvl[0] = vl_hist[m] - frac * (vl_hist[m] - vl_hist[m - 1])
        return True
    if (m == 0 and frac == 0.0) or pre_visible:
        pgap[0] = gap_hist[0]
        pvl[0] = vl_hist[0]
        return True
    return False


cdef inline double _idm_plus(double ve, bint visible, double pgap, double pvl, double v_des,
                             double headway, double a_max, double sqrt_ab2, double delta,
                             double s_jam, double cap, double perception) noexcept nogil:
    cdef double free_term = 1.0 - pow(ve / v_des, delta)
    cdef double dyn, s_star, ratio, inter, acc
    if visible and pgap <= perception:
        dyn = ve * headway + ve * (ve - pvl) / sqrt_ab2
        s_star = s_jam + (dyn if dyn > 0.0 else 0.0)
        ratio = s_star / pgap
        inter = 1.0 - ratio * ratio
        acc = a_max * (free_term if free_term < inter else inter)
    else:
        acc = a_max * free_term
    if acc < -cap:
        return -cap
    if acc > a_max:
        return a_max
    return acc


cdef inline void _advance(double* xe, double* ve, double acc, double dt) noexcept nogil:
    cdef double v_next = ve[0] + acc * dt
    if v_next < 0.0:
        xe[0] = xe[0] - 0.5 * ve[0] * ve[0] / acc
        ve[0] = 0.0
    else:
        xe[0] = xe[0] + 0.5 * (ve[0] + v_next) * dt
        ve[0] = v_next


cdef inline void _store(double[:, ::1] tr, Py_ssize_t row, double t, double xe, double ve,
                        double acc, double xl, double vl, double gap, double ttc) noexcept nogil:
    tr[row, 0] = t
    tr[row, 1] = xe
    tr[row, 2] = ve
    tr[row, 3] = acc
    tr[row, 4] = xl
    tr[row, 5] = vl
    tr[row, 6] = gap
    tr[row, 7] = ttc


def simulate_run(double ego_v0, double lead_x0, double lead_v0, double lead_dv,
                 double lead_td, bint pre_visible, double v_des, double headway,
                 double a_max, double b_comf, double delta, double s_jam, double cap,
                 double perception, double tau, double dt, double horizon,
                 bint record=False, double hold=0.0):
    cdef Py_ssize_t n_steps = <Py_ssize_t>round(horizon / dt)
    cdef double lag_f = tau / dt
    cdef Py_ssize_t lag = <Py_ssize_t>floor(lag_f)
    cdef double frac = lag_f - lag
    cdef double hold_f = hold / dt
    cdef Py_ssize_t h_int = <Py_ssize_t>floor(hold_f)
    cdef double h_frac = hold_f - h_int
    cdef double sqrt_ab2 = 2.0 * sqrt(a_max * b_comf)
    cdef double* gap_hist = <double*>malloc((n_steps + 2) * sizeof(double))
    cdef double* vl_hist = <double*>malloc((n_steps + 2) * sizeof(double))
    if gap_hist == NULL or vl_hist == NULL:
        free(gap_hist)
        free(vl_hist)
        raise MemoryError()

    traj = None
    cdef double[:, ::1] tr
    if record:
        traj = np.zeros((n_steps + 1, 8), dtype=np.float64)
        tr = traj

    cdef double xe = 0.0, ve = ego_v0, min_ttc = INFINITY
    cdef double gap = lead_x0, t = 0.0, xl = 0.0, vl = 0.0, xl1 = 0.0, vl1 = 0.0
    cdef double closing, ttc, pgap = 0.0, pvl = 0.0, acc0, acc1, acc, xp, vp
    cdef bint collision = False, vis, held
    cdef Py_ssize_t n, n_rows = 0

    with nogil:
        for n in range(n_steps + 1):
            t = n * dt
            _leader_state(t, lead_x0, lead_v0, lead_dv, lead_td, &xl, &vl)
            gap = xl - xe
            if gap <= 0.0:
                collision = True
                if record:
                    _store(tr, n_rows, t, xe, ve, 0.0, xl, vl, gap, 0.0)
                    n_rows += 1
                break
            closing = ve - vl
            if closing > 0.0:
                ttc = gap / closing
            else:
                ttc = INFINITY
            if ttc < min_ttc:
                min_ttc = ttc
            gap_hist[n] = gap
            vl_hist[n] = vl

            held = n < h_int
            if held:
                acc0 = 0.0
            else:
                vis = _perceived(n, lag, frac, gap_hist, vl_hist, pre_visible, &pgap, &pvl)
                acc0 = _idm_plus(ve, vis, pgap, pvl, v_des, headway, a_max, sqrt_ab2, delta,
                                 s_jam, cap, perception)
            if n == n_steps:
                if record:
                    _store(tr, n_rows, t, xe, ve, acc0, xl, vl, gap, ttc)
                    n_rows += 1
                break
            if held:
                if record:
                    _store(tr, n_rows, t, xe, ve, 0.0, xl, vl, gap, ttc)
                    n_rows += 1
                _advance(&xe, &ve, 0.0, dt)
                continue
            # predictor
            xp = xe
            vp = ve
            _advance(&xp, &vp, acc0, dt)
            _leader_state(t + dt, lead_x0, lead_v0, lead_dv, lead_td, &xl1, &vl1)
            gap_hist[n + 1] = xl1 - xp
            vl_hist[n + 1] = vl1
            if gap_hist[n + 1] > 0.0:
                vis = _perceived(n + 1, lag, frac, gap_hist, vl_hist, pre_visible, &pgap, &pvl)
                acc1 = _idm_plus(vp, vis, pgap, pvl, v_des, headway, a_max, sqrt_ab2, delta,
                                 s_jam, cap, perception)
                if vis and n == lag and frac > 0.0 and not pre_visible:
                    acc = frac * acc0 + (1.0 - frac) * acc1
                else:
                    acc = 0.5 * (acc0 + acc1)
            else:
                acc = acc0
            if n == h_int and h_frac > 0.0:
                acc = (1.0 - h_frac) * acc
            if record:
                _store(tr, n_rows, t, xe, ve, acc, xl, vl, gap, ttc)
                n_rows += 1
            _advance(&xe, &ve, acc, dt)

    free(gap_hist)
    free(vl_hist)
    if record:
        traj = traj[:n_rows].copy()
    return bool(collision), min_ttc, gap, t, traj
