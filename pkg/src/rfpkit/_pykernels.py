"""Pure-Python/NumPy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``RFPKIT_PURE_PYTHON=1`` is set. Results must agree with the compiled
versions to floating-point rounding.
"""

from __future__ import annotations

import math

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)
_ROW_BLOCK = 512


def loo_loglik(points: np.ndarray, h: float) -> float:
    """Leave-one-out log-likelihood of a Gaussian-kernel KDE with bandwidth ``h``."""
    pts = np.ascontiguousarray(points, dtype=float)
    n, d = pts.shape
    sqnorm = np.einsum("ij,ij->i", pts, pts)
    total = 0.0
    log_norm = -math.log(n - 1) - d * math.log(h) - 0.5 * d * _LOG_2PI
    for start in range(0, n, _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, n)
        block = pts[start:stop]
        d2 = sqnorm[start:stop, None] + sqnorm[None, :] - 2.0 * block @ pts.T
        np.maximum(d2, 0.0, out=d2)
        expo = -0.5 * d2 / (h * h)
        rows = np.arange(stop - start)
        expo[rows, rows + start] = -np.inf
        peak = expo.max(axis=1)
        lse = peak + np.log(np.exp(expo - peak[:, None]).sum(axis=1))
        total += float(lse.sum())
    return total + n * log_norm


def kde_logpdf(points: np.ndarray, queries: np.ndarray, h: float) -> np.ndarray:
    """Log of the kernel sum at each query row (standardized space)."""
    pts = np.ascontiguousarray(points, dtype=float)
    qs = np.ascontiguousarray(queries, dtype=float)
    n, d = pts.shape
    out = np.empty(qs.shape[0])
    log_norm = -math.log(n) - d * math.log(h) - 0.5 * d * _LOG_2PI
    inv2h2 = 0.5 / (h * h)
    for start in range(0, qs.shape[0], _ROW_BLOCK):
        block = qs[start:start + _ROW_BLOCK]
        diff = block[:, None, :] - pts[None, :, :]
        expo = -np.einsum("mnk,mnk->mn", diff, diff) * inv2h2
        peak = expo.max(axis=1)
        out[start:start + block.shape[0]] = peak + np.log(
            np.exp(expo - peak[:, None]).sum(axis=1))
    return out + log_norm


def _leader_state(t, x0, v0, dv, td):
    if td <= 0.0:
        return x0 + v0 * t, v0
    if t >= td:
        x_end = x0 + v0 * td - 0.5 * dv * td
        return x_end + (v0 - dv) * (t - td), v0 - dv
    w = math.pi / td
    x = x0 + v0 * t - 0.5 * dv * (t - math.sin(w * t) / w)
    v = v0 - 0.5 * dv * (1.0 - math.cos(w * t))
    return x, v


def _perceived(n_ref, lag, frac, gap_hist, vl_hist, pre_visible):
    """Leader gap and speed as seen ``lag + frac`` steps before step ``n_ref``."""
    m = n_ref - lag
    if m >= 1:
        # linear interpolation between the two stored samples around t - tau
        return (True, gap_hist[m] - frac * (gap_hist[m] - gap_hist[m - 1]),
                vl_hist[m] - frac * (vl_hist[m] - vl_hist[m - 1]))
    if (m == 0 and frac == 0.0) or pre_visible:
        return True, gap_hist[0], vl_hist[0]
    return False, 0.0, 0.0


def _idm_plus(ve, visible, pgap, pvl, v_des, headway, a_max, sqrt_ab2, delta, s_jam, cap, perception):
    free = 1.0 - (ve / v_des) ** delta
    if visible and pgap <= perception:
        dyn = ve * headway + ve * (ve - pvl) / sqrt_ab2
        s_star = s_jam + (dyn if dyn > 0.0 else 0.0)
        ratio = s_star / pgap
        inter = 1.0 - ratio * ratio
        acc = a_max * (free if free < inter else inter)
    else:
        acc = a_max * free
    if acc < -cap:
        return -cap
    if acc > a_max:
        return a_max
    return acc


def _advance(xe, ve, acc, dt):
    v_next = ve + acc * dt
    if v_next < 0.0:
        # stops within the step
        return xe - 0.5 * ve * ve / acc, 0.0
    return xe + 0.5 * (ve + v_next) * dt, v_next


def simulate_run(ego_v0, lead_x0, lead_v0, lead_dv, lead_td, pre_visible,
                 v_des, headway, a_max, b_comf, delta, s_jam, cap, perception,
                 tau, dt, horizon, record=False, hold=0.0):
    """Integrate one longitudinal car-following run.

    Each step uses Heun's predictor-corrector on the (delayed) IDM+
    acceleration and a constant-acceleration position update. ``tau`` delays
    the perceived gap and leader speed; until ``hold`` the ego keeps zero
    acceleration.
    Returns ``(collision, min_ttc, final_gap, t_end, trajectory)`` where the
    trajectory is an ``(steps, 8)`` array when ``record`` is true, else None.
    """
    n_steps = int(round(horizon / dt))
    lag_f = tau / dt
    lag = int(math.floor(lag_f))
    frac = lag_f - lag
    hold_f = hold / dt
    h_int = int(math.floor(hold_f))
    h_frac = hold_f - h_int
    sqrt_ab2 = 2.0 * math.sqrt(a_max * b_comf)
    gap_hist = [0.0] * (n_steps + 2)
    vl_hist = [0.0] * (n_steps + 2)
    rows = [] if record else None
    model = (v_des, headway, a_max, sqrt_ab2, delta, s_jam, cap, perception)

    xe = 0.0
    ve = ego_v0
    min_ttc = math.inf
    collision = False
    gap = lead_x0
    t = 0.0
    for n in range(n_steps + 1):
        t = n * dt
        xl, vl = _leader_state(t, lead_x0, lead_v0, lead_dv, lead_td)
        gap = xl - xe
        if gap <= 0.0:
            collision = True
            if record:
                rows.append((t, xe, ve, 0.0, xl, vl, gap, 0.0))
            break
        closing = ve - vl
        ttc = gap / closing if closing > 0.0 else math.inf
        if ttc < min_ttc:
            min_ttc = ttc
        gap_hist[n] = gap
        vl_hist[n] = vl

        held = n < h_int
        if held:
            acc0 = 0.0
        else:
            vis, pgap, pvl = _perceived(n, lag, frac, gap_hist, vl_hist, pre_visible)
            acc0 = _idm_plus(ve, vis, pgap, pvl, *model)
        if n == n_steps:
            if record:
                rows.append((t, xe, ve, acc0, xl, vl, gap, ttc))
            break
        if held:
            if record:
                rows.append((t, xe, ve, 0.0, xl, vl, gap, ttc))
            xe, ve = _advance(xe, ve, 0.0, dt)
            continue
        # predictor
        xp, vp = _advance(xe, ve, acc0, dt)
        xl1, vl1 = _leader_state(t + dt, lead_x0, lead_v0, lead_dv, lead_td)
        gap_hist[n + 1] = xl1 - xp
        vl_hist[n + 1] = vl1
        if gap_hist[n + 1] > 0.0:
            vis, pgap, pvl = _perceived(n + 1, lag, frac, gap_hist, vl_hist, pre_visible)
            acc1 = _idm_plus(vp, vis, pgap, pvl, *model)
            if vis and n == lag and frac > 0.0 and not pre_visible:
                # leader appears part-way through this step
                acc = frac * acc0 + (1.0 - frac) * acc1
            else:
                acc = 0.5 * (acc0 + acc1)
        else:
            acc = acc0
        if n == h_int and h_frac > 0.0:
            # the response starts part-way through this step
            acc = (1.0 - h_frac) * acc
        if record:
            rows.append((t, xe, ve, acc, xl, vl, gap, ttc))
        xe, ve = _advance(xe, ve, acc, dt)

    traj = np.array(rows, dtype=float).reshape(-1, 8) if record else None
    return collision, min_ttc, gap, t, traj
