"""Uniform B-spline trajectories in matrix form.

A trajectory is a degree-p uniform B-spline over 3-D control points with a
fixed knot interval and a global start time.  Position evaluation uses the
per-span basis matrix M so that

    position(t) = [1, s, s^2, ..., s^p] @ M @ [Q_{m-p}, ..., Q_m]

with s = (t - t_m)/dt the local coordinate inside the knot span containing t.
The basis matrix is derived once per degree from the cardinal B-spline
recurrence with exact rational arithmetic, not hard-coded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np


class DomainError(ValueError):
    """Evaluation time outside the valid span of a trajectory."""


def _cardinal_pieces(order: int) -> list[list[Fraction]]:
    """Polynomial pieces of the cardinal B-spline N_k on [l, l+1], l = 0..k-1.

    Returns one coefficient list per integer subinterval, in the local
    coordinate u = x - l, lowest power first.  Built from the recurrence
    N_k(x) = (x N_{k-1}(x) + (k - x) N_{k-1}(x - 1)) / (k - 1).
    """
    pieces = [[Fraction(1)]]  # N_1 = 1 on [0, 1)
    for k in range(2, order + 1):
        prev = pieces
        pieces = []
        for l in range(k):
            coeffs = [Fraction(0)] * k
            # (u + l) * N_{k-1} restricted to this subinterval
            if l < k - 1:
                for i, c in enumerate(prev[l]):
                    coeffs[i + 1] += c
                    coeffs[i] += c * l
            # (k - u - l) * N_{k-1}(x - 1) restricted here
            if l >= 1:
                for i, c in enumerate(prev[l - 1]):
                    coeffs[i + 1] -= c
                    coeffs[i] += c * (k - l)
            pieces.append([c / (k - 1) for c in coeffs])
    return pieces


@lru_cache(maxsize=None)
def basis_matrix(degree: int) -> np.ndarray:
    """Span basis matrix M of shape (degree+1, degree+1).

    M[i, j] is the coefficient of s^i on the j-th control point of the span.
    Cached per degree; rows are exact rationals converted to float once.
    """
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    order = degree + 1
    pieces = _cardinal_pieces(order)
    m = np.empty((order, order))
    # Control point j of a span sees the cardinal spline piece on
    # [degree - j, degree - j + 1] in the span-local coordinate s.
    for j in range(order):
        piece = pieces[degree - j]
        for i in range(order):
            m[i, j] = float(piece[i])
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class BSplineTrajectory:
    """Degree-p uniform B-spline with 3-D control points.

    The evaluable domain is [start_time, start_time + (n_ctrl - degree) * dt].
    Instances are immutable; all methods are safe to call concurrently.
    """

    control_points: np.ndarray
    knot_interval: float
    start_time: float = 0.0
    degree: int = 3

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"control points must be (n, 3), got {pts.shape}")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if len(pts) < self.degree + 1:
            raise ValueError(
                f"need at least degree+1={self.degree + 1} control points, got {len(pts)}"
            )
        if not self.knot_interval > 0:
            raise ValueError(f"knot interval must be positive, got {self.knot_interval}")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "control_points", pts)

    @property
    def num_control_points(self) -> int:
        return len(self.control_points)

    @property
    def duration(self) -> float:
        return (len(self.control_points) - self.degree) * self.knot_interval

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    @property
    def domain(self) -> tuple[float, float]:
        return (self.start_time, self.end_time)

    def _span_and_s(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = (t - self.start_time) / self.knot_interval
        n_spans = len(self.control_points) - self.degree
        span = np.floor(u).astype(np.int64)
        # clamp the right endpoint into the last span (s = 1 there)
        span = np.clip(span, 0, n_spans - 1)
        s = u - span
        return span, s

    def position(self, t) -> np.ndarray:
        """Evaluate position at time(s) t.  Scalar in, (3,) out; array in, (n, 3) out."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.domain
        tol = 1e-9 * max(1.0, abs(hi))
        if np.any(t_arr < lo - tol) or np.any(t_arr > hi + tol):
            raise DomainError(
                f"t={t} outside trajectory domain [{lo:.6f}, {hi:.6f}]"
            )
        t_arr = np.clip(t_arr, lo, hi)
        span, s = self._span_and_s(t_arr)
        m = basis_matrix(self.degree)
        powers = s[:, None] ** np.arange(self.degree + 1)[None, :]
        weights = powers @ m  # (n, degree+1) weights over span control points
        idx = span[:, None] + np.arange(self.degree + 1)[None, :]
        out = np.einsum("nk,nkd->nd", weights, self.control_points[idx])
        if np.isscalar(t) or np.ndim(t) == 0:
            return out[0]
        return out

    def basis_weights(self, t) -> np.ndarray:
        """Basis weight of every control point at time(s) t, shape (n_t, n_ctrl).

        position(t) == basis_weights(t) @ control_points; used to make costs
        linear in the control points.
        """
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.domain
        t_arr = np.clip(t_arr, lo, hi)
        span, s = self._span_and_s(t_arr)
        m = basis_matrix(self.degree)
        powers = s[:, None] ** np.arange(self.degree + 1)[None, :]
        local = powers @ m
        out = np.zeros((len(t_arr), len(self.control_points)))
        cols = span[:, None] + np.arange(self.degree + 1)[None, :]
        np.put_along_axis(out, cols, local, axis=1)
        return out

    def derivative(self) -> "BSplineTrajectory":
        """Time-derivative spline: degree drops by one, same domain.

        Control points are (Q_{i+1} - Q_i) / dt; for uniform knots the
        degree factor in the classical formula cancels against the knot
        difference.
        """
        if self.degree < 1:
            raise ValueError("cannot differentiate a degree-0 spline")
        diff = np.diff(self.control_points, axis=0) / self.knot_interval
        return BSplineTrajectory(
            control_points=diff,
            knot_interval=self.knot_interval,
            start_time=self.start_time,
            degree=self.degree - 1,
        )

    def velocity(self, t) -> np.ndarray:
        return self.derivative().position(t)

    def with_control_points(self, pts: np.ndarray) -> "BSplineTrajectory":
        return BSplineTrajectory(pts, self.knot_interval, self.start_time, self.degree)


@lru_cache(maxsize=None)
def _boundary_operator(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """(A_start, A_end): derivative orders 0..p-1 at a domain end vs the p
    boundary control points, computed at dt = 1.

    A_start[m, j] is the m-th derivative at the domain start per unit of
    Q_j; A_end likewise for the last p control points.  Row m scales by
    dt^-m for other knot intervals.
    """
    p = degree
    n = p + 1  # minimal spline: unused far-end point contributes nothing
    a_start = np.zeros((p, p))
    a_end = np.zeros((p, p))
    for j in range(p):
        pts = np.zeros((n, 3))
        pts[j, 0] = 1.0
        traj = BSplineTrajectory(pts, 1.0, 0.0, p)
        for m in range(p):
            a_start[m, j] = traj.position(0.0)[0]
            traj = traj.derivative() if m < p - 1 else traj
        # rebuild for end evaluation (derivative() consumed traj above)
        pts_e = np.zeros((n, 3))
        pts_e[j + 1, 0] = 1.0
        traj_e = BSplineTrajectory(pts_e, 1.0, 0.0, p)
        for m in range(p):
            a_end[m, j] = traj_e.position(traj_e.end_time)[0]
            traj_e = traj_e.derivative() if m < p - 1 else traj_e
    return a_start, a_end


def _boundary_solve(a: np.ndarray, states: np.ndarray, dt: float) -> np.ndarray:
    p = len(a)
    scale = dt ** -np.arange(p)
    return np.linalg.solve(a * scale[:, None], states)


def boundary_control_points_start(states: np.ndarray, dt: float, degree: int = 3) -> np.ndarray:
    """First `degree` control points realizing the given boundary state.

    `states` is (degree, 3): position, velocity, ... up to derivative
    order degree-1 at the domain start.  For cubic splines that is
    (position, velocity, acceleration).
    """
    states = np.asarray(states, dtype=float)
    if states.shape != (degree, 3):
        raise ValueError(f"states must be ({degree}, 3), got {states.shape}")
    a_start, _ = _boundary_operator(degree)
    return _boundary_solve(a_start, states, dt)


def boundary_control_points_end(states: np.ndarray, dt: float, degree: int = 3) -> np.ndarray:
    """Last `degree` control points realizing the boundary state at the domain end."""
    states = np.asarray(states, dtype=float)
    if states.shape != (degree, 3):
        raise ValueError(f"states must be ({degree}, 3), got {states.shape}")
    _, a_end = _boundary_operator(degree)
    return _boundary_solve(a_end, states, dt)


def fit_trajectory(
    times: np.ndarray,
    points: np.ndarray,
    knot_interval: float,
    start_time: float,
    num_ctrl: int,
    degree: int = 3,
    start_state: np.ndarray | None = None,
    end_state: np.ndarray | None = None,
) -> BSplineTrajectory:
    """Least-squares B-spline fit to sampled points, with optional pinned ends.

    When start_state / end_state (shape (degree, 3): derivative orders
    0..degree-1) are given, the first / last `degree` control points are set
    exactly from them and only the middle ones are fitted.
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    if num_ctrl < degree + 1:
        raise ValueError("num_ctrl too small for degree")
    ref = BSplineTrajectory(np.zeros((num_ctrl, 3)), knot_interval, start_time, degree)
    basis = ref.basis_weights(times)  # (n_samples, num_ctrl)

    q = np.zeros((num_ctrl, 3))
    fixed = np.zeros(num_ctrl, dtype=bool)
    if start_state is not None:
        q[:degree] = boundary_control_points_start(start_state, knot_interval, degree)
        fixed[:degree] = True
    if end_state is not None:
        q[num_ctrl - degree:] = boundary_control_points_end(end_state, knot_interval, degree)
        fixed[num_ctrl - degree:] = True

    free = ~fixed
    if free.any():
        rhs = points - basis[:, fixed] @ q[fixed]
        sol, *_ = np.linalg.lstsq(basis[:, free], rhs, rcond=None)
        q[free] = sol
    return BSplineTrajectory(q, knot_interval, start_time, degree)
