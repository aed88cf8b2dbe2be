"""Limited-memory quasi-Newton minimizer for C1 objectives.

The planning costs have continuous value and gradient but kinked second
derivatives at barrier junctions, so the line search only enforces the weak
Wolfe conditions (sufficient decrease plus a directional-derivative bound)
located by bisection.  That combination stays stable where a strong-Wolfe
cubic search can loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    status: str


def _weak_wolfe(f, x, fx, gx, direction, c1=1e-4, c2=0.9, max_bisect=50):
    """Step length satisfying Armijo and the weak curvature condition.

    Bisects a (lo, hi) bracket: Armijo failure shrinks hi, curvature failure
    grows lo.  Returns (t, x_new, f_new, g_new) or None when the bracket
    collapses without an acceptable step.
    """
    slope = float(np.dot(gx, direction))
    if slope >= 0:
        return None
    lo, hi = 0.0, np.inf
    t = 1.0
    best = None
    for _ in range(max_bisect):
        x_new = x + t * direction
        f_new, g_new = f(x_new)
        if f_new > fx + c1 * t * slope or not np.isfinite(f_new):
            hi = t
        elif float(np.dot(g_new, direction)) < c2 * slope:
            lo = t
            best = (t, x_new, f_new, g_new)
        else:
            return t, x_new, f_new, g_new
        t = (lo + hi) / 2 if np.isfinite(hi) else 2 * t
        if hi - lo < 1e-16 and np.isfinite(hi):
            break
    # a step that at least decreased f is still usable
    return best


def minimize(
    f,
    x0: np.ndarray,
    max_iterations: int = 60,
    memory: int = 8,
    grad_tol: float = 1e-5,
    f_tol: float = 1e-10,
) -> MinimizeResult:
    """Minimize f(x) -> (value, gradient) from x0.

    Stops on gradient infinity-norm below grad_tol, relative objective
    decrease below f_tol, line-search failure, or the iteration budget.
    """
    x = np.asarray(x0, dtype=float).ravel().copy()
    fx, gx = f(x)
    gx = np.asarray(gx, dtype=float).ravel()
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    status = "max_iterations"
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        if np.max(np.abs(gx)) <= grad_tol:
            status, converged = "gradient", True
            it -= 1
            break
        q = gx.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            y_last = y_hist[-1]
            q *= np.dot(s_hist[-1], y_last) / np.dot(y_last, y_last)
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        direction = -q
        if np.dot(direction, gx) >= 0:
            direction = -gx  # curvature history unusable, restart on steepest descent
            s_hist, y_hist, rho_hist = [], [], []
        step = _weak_wolfe(f, x, fx, gx, direction)
        if step is None:
            status = "line_search"
            break
        _, x_new, f_new, g_new = step
        g_new = np.asarray(g_new, dtype=float).ravel()
        s = x_new - x
        y = g_new - gx
        sy = float(np.dot(s, y))
        if sy > 1e-12 * np.linalg.norm(s) * max(np.linalg.norm(y), 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        decrease = fx - f_new
        x, fx, gx = x_new, f_new, g_new
        if 0 <= decrease <= f_tol * max(1.0, abs(fx)):
            status, converged = "f_decrease", True
            break
    else:
        it = max_iterations
    if status == "gradient":
        converged = True
    return MinimizeResult(x=x, fun=fx, grad=gx, iterations=it, converged=converged, status=status)
