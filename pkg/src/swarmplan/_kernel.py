"""Compiled inner loop of the local planner.

Replicates the numpy objective in optimizer._Objective and the quasi-Newton
loop in lbfgs.minimize as one numba kernel, so a replan costs microseconds
instead of milliseconds.  The pure-numpy implementations stay authoritative:
the test suite pins this kernel against them on random instances, and any
behavior change must land in both places.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_MAX_ITER = 0
STATUS_GRADIENT = 1
STATUS_F_DECREASE = 2
STATUS_LINE_SEARCH = 3


@njit(cache=True)
def _objective(
    x,
    q,
    degree,
    dt,
    pair_owner,
    pair_anchor,
    pair_dir,
    sw_basis,
    sw_other,
    sw_w,
    sw_zscale,
    sw_bound,
    goal,
    w_s,
    w_c,
    w_d,
    w_t,
    w_w,
    v_max,
    a_max,
    clearance_obs,
    b_exp,
    b_margin,
    margin_ratio,
):
    n = q.shape[0]
    lo = degree
    hi = n - degree
    for i in range(hi - lo):
        for k in range(3):
            q[lo + i, k] = x[3 * i + k]
    f = 0.0
    g = np.zeros((n, 3))

    # smoothness: squared second and third control differences
    for i in range(n - 2):
        for k in range(3):
            acc = q[i + 2, k] - 2.0 * q[i + 1, k] + q[i, k]
            f += w_s * acc * acc
            g[i, k] += 2.0 * w_s * acc
            g[i + 1, k] -= 4.0 * w_s * acc
            g[i + 2, k] += 2.0 * w_s * acc
    for i in range(n - 3):
        for k in range(3):
            jerk = q[i + 3, k] - 3.0 * q[i + 2, k] + 3.0 * q[i + 1, k] - q[i, k]
            f += w_s * jerk * jerk
            g[i, k] -= 2.0 * w_s * jerk
            g[i + 1, k] += 6.0 * w_s * jerk
            g[i + 2, k] -= 6.0 * w_s * jerk
            g[i + 3, k] += 2.0 * w_s * jerk

    # per-axis dynamic barriers, violations in margin units
    sv = margin_ratio * v_max
    bound_v = v_max - sv
    sa = margin_ratio * a_max
    bound_a = a_max - sa
    for i in range(n - 1):
        for k in range(3):
            v = (q[i + 1, k] - q[i, k]) / dt
            viol = abs(v) - bound_v
            if viol > 0.0:
                u = viol / sv
                f += w_d * u**b_exp
                dc = w_d * b_exp / sv * u ** (b_exp - 1)
                if v < 0.0:
                    dc = -dc
                g[i + 1, k] += dc / dt
                g[i, k] -= dc / dt
    for i in range(n - 2):
        for k in range(3):
            a = (q[i + 2, k] - 2.0 * q[i + 1, k] + q[i, k]) / (dt * dt)
            viol = abs(a) - bound_a
            if viol > 0.0:
                u = viol / sa
                f += w_d * u**b_exp
                dc = w_d * b_exp / sa * u ** (b_exp - 1)
                if a < 0.0:
                    dc = -dc
                dc /= dt * dt
                g[i + 2, k] += dc
                g[i + 1, k] -= 2.0 * dc
                g[i, k] += dc

    # terminal: squared distance of the tail mean to the local goal
    tail = degree + 1
    if tail > n:
        tail = n
    for k in range(3):
        mean = 0.0
        for i in range(n - tail, n):
            mean += q[i, k]
        mean /= tail
        delta = mean - goal[k]
        f += w_t * delta * delta
        for i in range(n - tail, n):
            g[i, k] += w_t * 2.0 * delta / tail

    # obstacle pairs, violations in margin units
    sc = b_margin
    for j in range(pair_owner.shape[0]):
        i = pair_owner[j]
        d = 0.0
        for k in range(3):
            d += (q[i, k] - pair_anchor[j, k]) * pair_dir[j, k]
        viol = (clearance_obs + b_margin) - d
        if viol > 0.0:
            u = viol / sc
            f += w_c * u**b_exp
            dc = w_c * b_exp / sc * u ** (b_exp - 1)
            for k in range(3):
                g[i, k] -= dc * pair_dir[j, k]

    # swarm quadrature, violations in margin units
    n_s = sw_basis.shape[0]
    for s in range(n_s):
        ox = 0.0
        oy = 0.0
        oz = 0.0
        for i in range(n):
            b = sw_basis[s, i]
            ox += b * q[i, 0]
            oy += b * q[i, 1]
            oz += b * q[i, 2]
        dx = ox - sw_other[s, 0]
        dy = oy - sw_other[s, 1]
        dz = oz - sw_other[s, 2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz * sw_zscale)
        if dist <= 1e-12:
            continue
        d = (dist - sw_bound) / b_margin
        if d < 0.0:
            f += w_w * sw_w[s] * d * d
            coeff = w_w * 2.0 * sw_w[s] * d / (dist * b_margin)
            px = coeff * dx
            py = coeff * dy
            pz = coeff * dz * sw_zscale
            for i in range(n):
                b = sw_basis[s, i]
                g[i, 0] += b * px
                g[i, 1] += b * py
                g[i, 2] += b * pz

    gx = np.empty(3 * (hi - lo))
    for i in range(hi - lo):
        for k in range(3):
            gx[3 * i + k] = g[lo + i, k]
    return f, gx


@njit(cache=True)
def plan_kernel(
    q0,
    degree,
    dt,
    pair_owner,
    pair_anchor,
    pair_dir,
    sw_basis,
    sw_other,
    sw_w,
    sw_zscale,
    sw_bound,
    goal,
    w_s,
    w_c,
    w_d,
    w_t,
    w_w,
    v_max,
    a_max,
    clearance_obs,
    b_exp,
    b_margin,
    margin_ratio,
    max_iterations,
    grad_tol,
    f_tol,
    memory,
):
    """L-BFGS with weak-Wolfe bisection over the interior control points.

    Mirrors lbfgs.minimize exactly; returns (q_final, f, iterations, status).
    """
    n = q0.shape[0]
    q = q0.copy()
    lo = degree
    hi = n - degree
    dim = 3 * (hi - lo)
    x = np.empty(dim)
    for i in range(hi - lo):
        for k in range(3):
            x[3 * i + k] = q0[lo + i, k]

    fx, gx = _objective(
        x, q, degree, dt, pair_owner, pair_anchor, pair_dir, sw_basis, sw_other,
        sw_w, sw_zscale, sw_bound, goal, w_s, w_c, w_d, w_t, w_w, v_max, a_max,
        clearance_obs, b_exp, b_margin, margin_ratio,
    )

    S = np.zeros((memory, dim))
    Y = np.zeros((memory, dim))
    rho = np.zeros(memory)
    alphas = np.zeros(memory)
    n_hist = 0
    status = STATUS_MAX_ITER
    iters = 0
    c1 = 1e-4
    c2 = 0.9

    for it in range(1, max_iterations + 1):
        gmax = 0.0
        for j in range(dim):
            a = abs(gx[j])
            if a > gmax:
                gmax = a
        if gmax <= grad_tol:
            status = STATUS_GRADIENT
            break
        iters = it

        # two-loop recursion, newest to oldest then back
        d = gx.copy()
        for h in range(n_hist):
            idx = n_hist - 1 - h
            a = rho[idx] * np.dot(S[idx], d)
            alphas[idx] = a
            d -= a * Y[idx]
        if n_hist > 0:
            last = n_hist - 1
            d *= np.dot(S[last], Y[last]) / np.dot(Y[last], Y[last])
        for idx in range(n_hist):
            b = rho[idx] * np.dot(Y[idx], d)
            d += (alphas[idx] - b) * S[idx]
        for j in range(dim):
            d[j] = -d[j]
        slope = np.dot(d, gx)
        if slope >= 0.0:
            for j in range(dim):
                d[j] = -gx[j]
            slope = -np.dot(gx, gx)
            n_hist = 0

        # weak-Wolfe bisection
        t_lo = 0.0
        t_hi = np.inf
        t = 1.0
        found = False
        best_t = 0.0
        best_f = fx
        have_best = False
        x_new = x
        f_new = fx
        g_new = gx
        for _ in range(50):
            x_try = x + t * d
            f_try, g_try = _objective(
                x_try, q, degree, dt, pair_owner, pair_anchor, pair_dir, sw_basis,
                sw_other, sw_w, sw_zscale, sw_bound, goal, w_s, w_c, w_d, w_t, w_w,
                v_max, a_max, clearance_obs, b_exp, b_margin, margin_ratio,
            )
            if f_try > fx + c1 * t * slope or np.isnan(f_try):
                t_hi = t
            elif np.dot(g_try, d) < c2 * slope:
                t_lo = t
                best_t = t
                best_f = f_try
                have_best = True
                x_new = x_try
                f_new = f_try
                g_new = g_try
                found = False
            else:
                x_new = x_try
                f_new = f_try
                g_new = g_try
                found = True
                break
            if np.isfinite(t_hi):
                t = (t_lo + t_hi) / 2.0
            else:
                t = 2.0 * t
            if np.isfinite(t_hi) and t_hi - t_lo < 1e-16:
                break
        if not found and not have_best:
            status = STATUS_LINE_SEARCH
            break
        if not found:
            t = best_t
            f_new = best_f

        # curvature update
        s_vec = x_new - x
        y_vec = g_new - gx
        sy = np.dot(s_vec, y_vec)
        s_norm = np.sqrt(np.dot(s_vec, s_vec))
        y_norm = np.sqrt(np.dot(y_vec, y_vec))
        if sy > 1e-12 * s_norm * max(y_norm, 1e-300):
            if n_hist == memory:
                for h in range(memory - 1):
                    S[h] = S[h + 1]
                    Y[h] = Y[h + 1]
                    rho[h] = rho[h + 1]
                n_hist -= 1
            S[n_hist] = s_vec
            Y[n_hist] = y_vec
            rho[n_hist] = 1.0 / sy
            n_hist += 1

        decrease = fx - f_new
        x = x_new
        fx = f_new
        gx = g_new
        if 0.0 <= decrease <= f_tol * max(1.0, abs(fx)):
            status = STATUS_F_DECREASE
            break

    for i in range(hi - lo):
        for k in range(3):
            q[lo + i, k] = x[3 * i + k]
    return q, fx, iters, status
