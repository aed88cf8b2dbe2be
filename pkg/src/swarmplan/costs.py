"""Penalty terms of the local planning objective.

Every term returns ``(value, gradient)`` with the gradient taken with respect
to the full control-point array, shape (n, 3).  Terms are pure functions so
the optimizer can evaluate candidate pair sets independently.

Weight fields map to the usual shorthand: smoothness λ_s, collision λ_c,
feasibility λ_d, terminal λ_t, swarm λ_w.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from swarmplan.bspline import BSplineTrajectory
from swarmplan.gridmap import PvPair


# dynamics barrier margin as a fraction of the limit: |v| is held below
# v_max*(1 - DYN_MARGIN_RATIO) at zero cost
DYN_MARGIN_RATIO = 0.05


@dataclass(frozen=True)
class CostWeights:
    smoothness: float = 1.0
    collision: float = 0.5
    feasibility: float = 0.1
    terminal: float = 0.5
    swarm: float = 0.5

    def __post_init__(self):
        for name in ("smoothness", "collision", "feasibility", "terminal", "swarm"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")


@dataclass(frozen=True)
class BarrierParams:
    """One-sided polynomial penalty: zero up to (threshold - margin), then
    ((value - threshold + margin) / scale) ** exponent.

    exponent >= 2 keeps the junction C1, which the line search relies on.
    """

    scale: float = 1.0
    exponent: int = 3
    margin: float = 0.05
    threshold: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("barrier scale must be positive")
        if int(self.exponent) != self.exponent or self.exponent < 2:
            raise ValueError("barrier exponent must be an integer >= 2")
        if self.margin < 0:
            raise ValueError("barrier margin must be non-negative")


def soft_barrier(value, params: BarrierParams):
    """Penalty and d(penalty)/d(value) for exceeding (threshold - margin).

    Accepts scalars or arrays; safe inputs cost exactly zero.
    """
    v = np.asarray(value, dtype=float)
    violation = v - (params.threshold - params.margin)
    active = violation > 0
    u = np.where(active, violation, 0.0) / params.scale
    n = params.exponent
    cost = u**n
    dcost = (n / params.scale) * u ** (n - 1)
    if v.ndim == 0:
        return float(cost), float(dcost)
    return cost, dcost


def smoothness_cost(ctrl_pts: np.ndarray):
    """Sum of squared second and third control-point differences.

    Penalizing the difference stencils directly (rather than sampled
    derivatives) keeps the term convex and the gradient banded.
    """
    q = np.asarray(ctrl_pts, dtype=float)
    grad = np.zeros_like(q)
    acc = q[2:] - 2 * q[1:-1] + q[:-2]
    cost = float(np.sum(acc * acc))
    grad[:-2] += 2 * acc
    grad[1:-1] -= 4 * acc
    grad[2:] += 2 * acc
    if len(q) >= 4:
        jerk = q[3:] - 3 * q[2:-1] + 3 * q[1:-2] - q[:-3]
        cost += float(np.sum(jerk * jerk))
        grad[:-3] -= 2 * jerk
        grad[1:-2] += 6 * jerk
        grad[2:-1] -= 6 * jerk
        grad[3:] += 2 * jerk
    return cost, grad


def collision_cost(
    ctrl_pts: np.ndarray,
    pairs: list[PvPair],
    clearance: float,
    barrier: BarrierParams = BarrierParams(),
):
    """Obstacle penalty over {p, v} pairs.

    Each pair contributes a barrier on clearance - d with d = (Q_i - p) . v,
    so cost appears once d drops below clearance + margin and grows
    polynomially with penetration depth.
    """
    q = np.asarray(ctrl_pts, dtype=float)
    grad = np.zeros_like(q)
    cost = 0.0
    if not pairs:
        return cost, grad
    # violations are measured in units of the margin so that a full-margin
    # penetration costs O(1) before weighting and smoothness cannot win
    params = replace(barrier, threshold=0.0, scale=barrier.scale * barrier.margin)
    for pair in pairs:
        d = float(np.dot(q[pair.owner_index] - pair.anchor, pair.direction))
        c, dc = soft_barrier(clearance - d, params)
        cost += c
        grad[pair.owner_index] -= dc * pair.direction
    return cost, grad


def feasibility_cost(
    ctrl_pts: np.ndarray,
    dt: float,
    v_max: float,
    a_max: float,
    margin_ratio: float = DYN_MARGIN_RATIO,
    barrier: BarrierParams = BarrierParams(),
):
    """Per-axis barrier on velocity and acceleration control points.

    Velocity points are (Q_{i+1} - Q_i)/dt, acceleration points their first
    difference over dt; each axis is limited independently with the margin a
    fixed fraction of the limit so the barrier keeps iterates strictly inside.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    q = np.asarray(ctrl_pts, dtype=float)
    grad = np.zeros_like(q)
    cost = 0.0
    vel = np.diff(q, axis=0) / dt
    # violation measured in margin units, as in collision_cost
    params_v = replace(
        barrier,
        threshold=v_max,
        margin=margin_ratio * v_max,
        scale=barrier.scale * margin_ratio * v_max,
    )
    c, dc = soft_barrier(np.abs(vel), params_v)
    cost += float(c.sum())
    dvel = dc * np.sign(vel) / dt
    grad[1:] += dvel
    grad[:-1] -= dvel
    if len(q) >= 3:
        acc = np.diff(vel, axis=0) / dt
        params_a = replace(
            barrier,
            threshold=a_max,
            margin=margin_ratio * a_max,
            scale=barrier.scale * margin_ratio * a_max,
        )
        c, dc = soft_barrier(np.abs(acc), params_a)
        cost += float(c.sum())
        dacc = dc * np.sign(acc) / dt**2
        grad[2:] += dacc
        grad[1:-1] -= 2 * dacc
        grad[:-2] += dacc
    return cost, grad


def terminal_cost(ctrl_pts: np.ndarray, goal: np.ndarray, tail: int = 4):
    """Squared distance from the mean of the last `tail` control points to
    the local goal; pulls the trajectory tail toward it without pinning."""
    q = np.asarray(ctrl_pts, dtype=float)
    goal = np.asarray(goal, dtype=float).reshape(3)
    tail = min(tail, len(q))
    mean = q[-tail:].mean(axis=0)
    delta = mean - goal
    cost = float(np.dot(delta, delta))
    grad = np.zeros_like(q)
    grad[-tail:] = 2 * delta / tail
    return cost, grad


@dataclass(frozen=True)
class RemoteTrajectory:
    agent_id: int
    trajectory: BSplineTrajectory
    received_at: float = 0.0


@dataclass(frozen=True)
class SwarmConstraintSet:
    """Latest remote trajectories an agent must stay clear of.

    clearance is the required center separation; ratio > 1 flattens the
    protective ellipsoid along z so downwash is avoided more aggressively
    than lateral proximity.
    """

    remotes: tuple[RemoteTrajectory, ...] = ()
    clearance: float = 0.8
    ratio: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "remotes", tuple(self.remotes))
        if not self.clearance > 0:
            raise ValueError("clearance must be positive")
        if not self.ratio > 1:
            raise ValueError("ellipsoid ratio must exceed 1")

    def filtered(self, center: np.ndarray, radius: float, now: float) -> "SwarmConstraintSet":
        """Drop remotes whose trajectory stays farther than `radius` from
        `center` over its remaining span (outside local planning range)."""
        center = np.asarray(center, dtype=float)
        kept = []
        for remote in self.remotes:
            t0, t1 = remote.trajectory.domain
            times = np.linspace(max(t0, min(now, t1)), t1, 16)
            pos = remote.trajectory.position(times)
            if np.min(np.linalg.norm(pos - center, axis=1)) <= radius:
                kept.append(remote)
        return replace(self, remotes=tuple(kept))


def ellipsoid_distance(delta: np.ndarray, ratio: float) -> np.ndarray:
    """Downwash-aware separation: Euclidean norm after shrinking z by sqrt(ratio)."""
    d = np.asarray(delta, dtype=float)
    scaled = d * np.array([1.0, 1.0, 1.0 / np.sqrt(ratio)])
    return np.linalg.norm(scaled, axis=-1)


def _clamped_positions(traj: BSplineTrajectory, times: np.ndarray) -> np.ndarray:
    """Positions with times clamped into the domain: an agent whose plan has
    ended (or not yet started) is assumed to hover at the boundary point."""
    t0, t1 = traj.domain
    return traj.position(np.clip(times, t0, t1))


def swarm_sample_times(traj: BSplineTrajectory, remote: BSplineTrajectory):
    """Quadrature grid for one remote: own domain from the remote's start on,
    sampled at half the knot interval."""
    t_s = max(traj.domain[0], remote.domain[0])
    t_e = traj.domain[1]
    if t_e <= t_s:
        return None
    n = max(2, int(np.ceil((t_e - t_s) / (traj.knot_interval / 2))) + 1)
    return np.linspace(t_s, t_e, n)


def swarm_cost(
    traj: BSplineTrajectory,
    constraints: SwarmConstraintSet,
    margin: float = 0.05,
    exponent: int = 2,
    scale: float | None = None,
):
    """Reciprocal-avoidance penalty against every remote trajectory.

    Integrates dist_penalty(t) = (d(t)/scale)^exponent for d(t) < 0 over the
    shared window with trapezoidal weights, where d(t) is the ellipsoidal
    separation minus (clearance + margin).  The violation scale defaults to
    the margin, consistent with the obstacle and dynamics barriers.  Remote
    positions beyond their domain clamp to the boundary (hover assumption).
    """
    if scale is None:
        scale = margin
    q = traj.control_points
    grad = np.zeros_like(q)
    cost = 0.0
    axis_scale = np.array([1.0, 1.0, 1.0 / constraints.ratio])
    for remote in constraints.remotes:
        times = swarm_sample_times(traj, remote.trajectory)
        if times is None:
            continue
        h = times[1] - times[0]
        w = np.full(len(times), h)
        w[0] = w[-1] = h / 2
        basis = traj.basis_weights(times)
        own = basis @ q
        other = _clamped_positions(remote.trajectory, times)
        delta = own - other
        dist = np.linalg.norm(delta * np.sqrt(axis_scale), axis=1)
        d = (dist - (constraints.clearance + margin)) / scale
        hit = (d < 0) & (dist > 1e-12)
        if not hit.any():
            continue
        dd = d[hit]
        cost += float(np.sum(w[hit] * (-dd) ** exponent))
        # d/ddelta of dist is (delta * axis_scale) / dist
        coeff = -exponent * w[hit] * (-dd) ** (exponent - 1) / (dist[hit] * scale)
        dpen = coeff[:, None] * (delta[hit] * axis_scale)
        grad += basis[hit].T @ dpen
    return cost, grad


def min_swarm_separation(
    own: BSplineTrajectory,
    remote: BSplineTrajectory,
    ratio: float,
    step: float = 0.05,
    t_start: float | None = None,
) -> float:
    """Minimum sampled ellipsoidal separation over the shared time window.

    Used by replan triggers and audits; remote clamps to its domain.
    """
    t0 = own.domain[0] if t_start is None else max(own.domain[0], t_start)
    t1 = own.domain[1]
    if t1 <= t0:
        t0 = t1
    n = max(2, int(np.ceil((t1 - t0) / step)) + 1)
    times = np.linspace(t0, t1, n)
    delta = own.position(times) - _clamped_positions(remote, times)
    return float(np.min(ellipsoid_distance(delta, ratio)))
