"""Local trajectory optimizer: objective assembly, the rebuild loop, and
implicit topological variants.

The decision variables are the interior control points; the first and last
`degree` points encode the boundary state and never move.  Obstacle terms act
through {p, v} pairs built lazily: optimize a candidate, re-check it against
the grid, anchor fresh pairs at any control points that still collide, and
repeat within a bounded number of rebuild rounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from swarmplan import _kernel
from swarmplan.bspline import BSplineTrajectory
from swarmplan.costs import (
    BarrierParams,
    CostWeights,
    DYN_MARGIN_RATIO,
    SwarmConstraintSet,
    collision_cost,
    feasibility_cost,
    min_swarm_separation,
    smoothness_cost,
    swarm_sample_times,
    terminal_cost,
    _clamped_positions,
)
from swarmplan.gridmap import (
    OccupancyGrid,
    PathNotFound,
    PvPair,
    colliding_runs,
    find_safe_path,
    first_colliding_segment,
    generate_pv_pairs,
    march_through,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerLimits:
    v_max: float = 2.0
    a_max: float = 6.0
    obstacle_clearance: float = 0.1
    max_iterations: int = 60
    max_rebuilds: int = 6
    max_march: float = 5.0
    grad_tol: float = 1e-3
    f_tol: float = 1e-9

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0):
            raise ValueError("dynamic limits must be positive")


@dataclass
class PlanResult:
    trajectory: BSplineTrajectory
    cost: float
    iterations: int
    rebuilds: int
    success: bool
    reason: str = ""
    term_costs: dict = field(default_factory=dict)
    pairs: list = field(default_factory=list)
    candidates: tuple = ()


def build_pairs(
    grid: OccupancyGrid, traj: BSplineTrajectory, limits: PlannerLimits
) -> list[PvPair]:
    """{p, v} pairs for every colliding control-point run of a trajectory.

    Each run gets its own bypass path (between the free control points
    bracketing it) and obstacle ordinal.  Runs that reach into the fixed
    boundary blocks or have no free bracket are skipped with a log entry:
    the boundary points are not decision variables, so pairs there would
    add constant cost without moving anything.
    """
    ctrl = traj.control_points
    n = len(ctrl)
    p = traj.degree
    pairs: list[PvPair] = []
    oid = 0
    for run in colliding_runs(grid, ctrl):
        i0, i1 = max(run[0], p), min(run[1], n - 1 - p)
        if i0 > i1:
            log.debug("pair run %s lies in the fixed boundary blocks, skipped", run)
            continue
        a = ctrl[run[0] - 1] if run[0] > 0 else ctrl[0]
        b = ctrl[run[1] + 1] if run[1] < n - 1 else ctrl[-1]
        try:
            gamma = find_safe_path(grid, a, b)
        except PathNotFound as exc:
            log.debug("no bypass path for run %s: %s", run, exc)
            continue
        new = generate_pv_pairs(
            grid, traj, gamma, run=(i0, i1), max_march=limits.max_march, first_obstacle_id=oid
        )
        if new:
            pairs.extend(new)
            oid += 1
    return pairs


class _Objective:
    """Total cost and gradient over the flattened interior control points.

    Swarm quadrature grids, remote sample positions, and pair arrays are
    precomputed at construction; evaluation is pure numpy so a replan stays
    in the millisecond range.
    """

    def __init__(self, traj, pairs, constraints, weights, limits, goal, barrier):
        self.template = traj
        self.q = traj.control_points.copy()
        self.degree = traj.degree
        self.n = len(self.q)
        self.free = slice(self.degree, self.n - self.degree)
        self.weights = weights
        self.limits = limits
        self.barrier = barrier
        self.goal = np.asarray(goal, dtype=float).reshape(3)
        self.dt = traj.knot_interval
        self.set_pairs(pairs)

        scale = np.array([1.0, 1.0, 1.0 / constraints.ratio])
        self.swarm_scale = scale
        self.swarm_bound = constraints.clearance + barrier.margin
        blocks = []
        for remote in constraints.remotes:
            times = swarm_sample_times(traj, remote.trajectory)
            if times is None:
                continue
            h = times[1] - times[0]
            w = np.full(len(times), h)
            w[0] = w[-1] = h / 2
            basis = traj.basis_weights(times)
            other = _clamped_positions(remote.trajectory, times)
            blocks.append((w, basis, other))
        if blocks:
            self.swarm_w = np.concatenate([b[0] for b in blocks])
            self.swarm_basis = np.concatenate([b[1] for b in blocks], axis=0)
            self.swarm_other = np.concatenate([b[2] for b in blocks], axis=0)
        else:
            self.swarm_w = None

    def set_pairs(self, pairs):
        self.pairs = list(pairs)
        if pairs:
            self.pair_owner = np.array([p.owner_index for p in pairs])
            self.pair_anchor = np.stack([p.anchor for p in pairs])
            self.pair_dir = np.stack([p.direction for p in pairs])
        else:
            self.pair_owner = None

    def run_kernel(self, q_start: np.ndarray, limits: PlannerLimits):
        """Minimize with the compiled loop; returns (q, cost, iters, status)."""
        if self.pair_owner is not None:
            owner, anchor, direction = self.pair_owner, self.pair_anchor, self.pair_dir
        else:
            owner = np.empty(0, dtype=np.int64)
            anchor = np.empty((0, 3))
            direction = np.empty((0, 3))
        if self.swarm_w is not None:
            basis, other, wq = self.swarm_basis, self.swarm_other, self.swarm_w
        else:
            basis = np.empty((0, self.n))
            other = np.empty((0, 3))
            wq = np.empty(0)
        w = self.weights
        return _kernel.plan_kernel(
            np.ascontiguousarray(q_start, dtype=float),
            self.degree,
            self.dt,
            owner.astype(np.int64),
            anchor,
            direction,
            basis,
            other,
            wq,
            self.swarm_scale[2],
            self.swarm_bound,
            self.goal,
            w.smoothness,
            w.collision,
            w.feasibility,
            w.terminal,
            w.swarm,
            self.limits.v_max,
            self.limits.a_max,
            self.limits.obstacle_clearance,
            self.barrier.exponent,
            self.barrier.margin,
            DYN_MARGIN_RATIO,
            limits.max_iterations,
            limits.grad_tol,
            limits.f_tol,
            8,
        )

    def assemble(self, x: np.ndarray) -> np.ndarray:
        q = self.q.copy()
        q[self.free] = x.reshape(-1, 3)
        return q

    def x0(self) -> np.ndarray:
        return self.q[self.free].ravel().copy()

    def __call__(self, x: np.ndarray):
        q = self.assemble(x)
        w = self.weights
        cost = 0.0
        grad = np.zeros_like(q)

        c, g = smoothness_cost(q)
        cost += w.smoothness * c
        grad += w.smoothness * g

        c, g = feasibility_cost(q, self.dt, self.limits.v_max, self.limits.a_max,
                                barrier=self.barrier)
        cost += w.feasibility * c
        grad += w.feasibility * g

        c, g = terminal_cost(q, self.goal, tail=self.degree + 1)
        cost += w.terminal * c
        grad += w.terminal * g

        if self.pair_owner is not None:
            d = np.einsum(
                "ij,ij->i", q[self.pair_owner] - self.pair_anchor, self.pair_dir
            )
            viol = (self.limits.obstacle_clearance + self.barrier.margin) - d
            active = viol > 0
            if active.any():
                scale = self.barrier.scale * self.barrier.margin  # as collision_cost
                u = viol[active] / scale
                nexp = self.barrier.exponent
                cost += w.collision * float(np.sum(u**nexp))
                dc = (nexp / scale) * u ** (nexp - 1)
                np.add.at(
                    grad,
                    self.pair_owner[active],
                    -w.collision * dc[:, None] * self.pair_dir[active],
                )

        if self.swarm_w is not None:
            own = self.swarm_basis @ q
            delta = own - self.swarm_other
            dist = np.linalg.norm(delta * np.sqrt(self.swarm_scale), axis=1)
            d = (dist - self.swarm_bound) / self.barrier.margin
            hit = (d < 0) & (dist > 1e-12)
            if hit.any():
                dd = d[hit]
                wq = self.swarm_w[hit]
                cost += w.swarm * float(np.sum(wq * dd * dd))
                coeff = w.swarm * 2.0 * wq * dd / (dist[hit] * self.barrier.margin)
                grad += self.swarm_basis[hit].T @ (
                    coeff[:, None] * (delta[hit] * self.swarm_scale)
                )

        return cost, grad[self.free].ravel()

    def term_breakdown(self, q: np.ndarray) -> dict:
        """Per-term weighted costs of a finished candidate, for diagnostics."""
        out = {
            "smoothness": self.weights.smoothness * smoothness_cost(q)[0],
            "feasibility": self.weights.feasibility
            * feasibility_cost(q, self.dt, self.limits.v_max, self.limits.a_max,
                               barrier=self.barrier)[0],
            "terminal": self.weights.terminal
            * terminal_cost(q, self.goal, tail=self.degree + 1)[0],
            "collision": self.weights.collision
            * collision_cost(q, self.pairs, self.limits.obstacle_clearance, self.barrier)[0],
        }
        if self.swarm_w is not None:
            cost, _ = self(q[self.free].ravel())
            out["swarm"] = cost - sum(out.values())
        else:
            out["swarm"] = 0.0
        return out


def _collision_free(grid, traj, limits):
    """Sampled check at half-resolution spatial density."""
    return first_colliding_segment(grid, traj, 2 * limits.v_max) is None


def _check_result(traj, grid, constraints, limits):
    """Post-optimization acceptance: obstacles, swarm clearance, dynamics."""
    if not _collision_free(grid, traj, limits):
        return "obstacle_collision"
    for remote in constraints.remotes:
        sep = min_swarm_separation(
            traj, remote.trajectory, constraints.ratio, step=traj.knot_interval / 2
        )
        if sep < constraints.clearance - 1e-9:
            return f"swarm_clearance[{remote.agent_id}]"
    vel = np.diff(traj.control_points, axis=0) / traj.knot_interval
    if np.abs(vel).max(initial=0.0) > limits.v_max + 1e-6:
        return "velocity_limit"
    acc = np.diff(vel, axis=0) / traj.knot_interval
    if np.abs(acc).max(initial=0.0) > limits.a_max + 1e-6:
        return "acceleration_limit"
    return ""


def optimize(
    initial: BSplineTrajectory,
    grid: OccupancyGrid,
    constraints: SwarmConstraintSet,
    weights: CostWeights = CostWeights(),
    limits: PlannerLimits = PlannerLimits(),
    goal: np.ndarray | None = None,
    pairs: list[PvPair] | None = None,
    barrier: BarrierParams = BarrierParams(),
) -> PlanResult:
    """Minimize the planning objective from an initial guess.

    Runs quasi-Newton descent, then re-anchors pairs at control points that
    still collide and descends again, up to the rebuild budget.  The returned
    result carries the best trajectory either way; success means the sampled
    obstacle, swarm, and dynamic-limit checks all passed.
    """
    if goal is None:
        goal = initial.position(initial.end_time)
    if pairs is None:
        pairs = build_pairs(grid, initial, limits)
    if len(initial.control_points) <= 2 * initial.degree:
        reason = _check_result(initial, grid, constraints, limits)
        return PlanResult(initial, 0.0, 0, 0, reason == "", reason or "no_free_points")

    objective = _Objective(initial, pairs, constraints, weights, limits, goal, barrier)
    q = objective.q.copy()
    total_iters = 0
    rebuilds = 0
    final_cost = 0.0
    traj = initial
    for round_idx in range(limits.max_rebuilds + 1):
        q, final_cost, iters, _status = objective.run_kernel(q, limits)
        total_iters += int(iters)
        traj = initial.with_control_points(q)
        if _collision_free(grid, traj, limits):
            break
        if round_idx == limits.max_rebuilds:
            break
        fresh = build_pairs(grid, traj, limits)
        known = {(p.owner_index, tuple(np.round(p.direction, 6))) for p in objective.pairs}
        base_oid = 1 + max((p.obstacle_id for p in objective.pairs), default=-1)
        added = [
            PvPair(p.anchor, p.direction, p.owner_index, base_oid + p.obstacle_id)
            for p in fresh
            if (p.owner_index, tuple(np.round(p.direction, 6))) not in known
        ]
        if not added:
            break
        objective.set_pairs(objective.pairs + added)
        rebuilds += 1

    reason = _check_result(traj, grid, constraints, limits)
    return PlanResult(
        trajectory=traj,
        cost=float(final_cost),
        iterations=total_iters,
        rebuilds=rebuilds,
        success=reason == "",
        reason=reason,
        term_costs=objective.term_breakdown(q),
        pairs=objective.pairs,
    )


def spawn_topological_variant(
    pairs: list[PvPair],
    grid: OccupancyGrid,
    ctrl_pts: np.ndarray,
    max_march: float = 5.0,
) -> list[PvPair] | None:
    """Pair set for the alternative homotopy around the worst obstacle.

    Picks the obstacle whose pair has the deepest violation, flips every one
    of its directions, and re-anchors each by marching from the old anchor
    through the obstacle to the far side.  Returns None when nothing violates
    or any march fails, leaving only the base candidate.
    """
    if not pairs:
        return None
    q = np.asarray(ctrl_pts, dtype=float)
    depths = [p.distance(q[p.owner_index]) for p in pairs]
    worst = int(np.argmin(depths))
    if depths[worst] >= 0:
        return None
    target_oid = pairs[worst].obstacle_id
    flipped = []
    for p in pairs:
        if p.obstacle_id != target_oid:
            flipped.append(p)
            continue
        anchor = march_through(grid, p.anchor, -p.direction, max_march)
        if anchor is None:
            log.debug("variant march failed for pair at ctrl %d", p.owner_index)
            return None
        flipped.append(p.inverted(anchor, p.obstacle_id))
    return flipped


def plan_with_variants(
    initial: BSplineTrajectory,
    grid: OccupancyGrid,
    constraints: SwarmConstraintSet,
    weights: CostWeights = CostWeights(),
    limits: PlannerLimits = PlannerLimits(),
    goal: np.ndarray | None = None,
    barrier: BarrierParams = BarrierParams(),
) -> PlanResult:
    """Optimize the base pair set and its inverted variant, keep the best.

    Candidates are optimized independently (sequentially, for determinism)
    and compared by final total cost; infeasible candidates lose to feasible
    ones regardless of cost.  All candidates are attached to the returned
    result for inspection.
    """
    base_pairs = build_pairs(grid, initial, limits)
    results = [
        optimize(initial, grid, constraints, weights, limits, goal, base_pairs, barrier)
    ]
    variant_pairs = spawn_topological_variant(
        base_pairs, grid, initial.control_points, limits.max_march
    )
    if variant_pairs is not None:
        results.append(
            optimize(initial, grid, constraints, weights, limits, goal, variant_pairs, barrier)
        )
    feasible = [r for r in results if r.success]
    pool = feasible if feasible else results
    best = min(pool, key=lambda r: r.cost)
    best.candidates = tuple(results)
    return best
