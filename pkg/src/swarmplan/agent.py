"""Per-agent planning state machine.

Owns the believed pose, the sensed grid, the latest remote trajectories, and
the replan triggers.  Planning happens in the agent's odometry (believed)
frame: trajectories are fitted to believed positions, execution tracks them
perfectly in that frame, and the true pose is recovered by subtracting the
injected drift.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from swarmplan.bspline import BSplineTrajectory, fit_trajectory
from swarmplan.costs import (
    CostWeights,
    RemoteTrajectory,
    SwarmConstraintSet,
    min_swarm_separation,
)
from swarmplan.gridmap import OccupancyGrid
from swarmplan.optimizer import PlannerLimits, PlanResult, plan_with_variants


class ReplanReason(enum.Enum):
    OBSTACLE = "obstacle"
    SWARM = "swarm"
    NEAR_END = "near_end"
    PERIODIC = "periodic"
    STARTUP = "startup"


@dataclass(frozen=True)
class AgentConfig:
    planning_horizon: float = 7.5
    knot_interval: float = 0.5
    replan_period: float = 1.0
    near_end_fraction: float = 0.25
    clearance: float = 0.8
    ellipsoid_ratio: float = 4.0
    goal_tolerance: float = 0.2
    cruise_fraction: float = 0.8
    max_control_points: int = 20


# -- initial-guess construction ------------------------------------------------


def time_allocation(length: float, v0: float, limits: PlannerLimits,
                    cruise_fraction: float = 0.8) -> float:
    """Trapezoidal-profile duration for a path of the given length.

    Accelerates from v0 to the cruise speed and back to rest at a third of
    a_max, leaving the optimizer headroom under the hard limits.
    """
    v_nom = cruise_fraction * limits.v_max
    a_eff = limits.a_max / 3
    t_acc = abs(v_nom - v0) / a_eff
    d_acc = 0.5 * (v0 + v_nom) * t_acc
    t_dec = v_nom / a_eff
    d_dec = 0.5 * v_nom * t_dec
    if d_acc + d_dec >= length:
        return 2.0 * np.sqrt(max(length, 1e-9) / a_eff) + v0 / a_eff
    return t_acc + t_dec + (length - d_acc - d_dec) / v_nom


def _trapezoid_speeds(times: np.ndarray, T: float, v0: float, length: float,
                      v_nom: float, a_eff: float) -> np.ndarray:
    """Speed profile samples; ramps at a_eff, rescaled to integrate to length."""
    t_acc = abs(v_nom - v0) / a_eff
    t_dec = v_nom / a_eff
    s = np.full_like(times, v_nom)
    rising = times < t_acc
    s[rising] = v0 + np.sign(v_nom - v0) * a_eff * times[rising]
    falling = times > T - t_dec
    s[falling] = np.minimum(s[falling], a_eff * np.maximum(T - times[falling], 0.0) )
    total = np.trapz(s, times)
    if total > 1e-12:
        s *= length / total
    return s


def _segment_count(T: float, dt: float, config: AgentConfig, degree: int = 3):
    """Knot count and (possibly stretched) interval under the message cap."""
    n_seg = max(2 * degree, int(np.ceil(T / dt)))
    max_seg = config.max_control_points - degree
    if n_seg > max_seg:
        return max_seg, T / max_seg
    return n_seg, dt


def straight_line_guess(
    start: np.ndarray,
    goal: np.ndarray,
    config: AgentConfig,
    limits: PlannerLimits,
    start_time: float = 0.0,
) -> BSplineTrajectory:
    """Rest-to-rest straight trajectory with trapezoidal control spacing.

    Built directly in control space: the first and last degree+1 points
    coincide (zero boundary velocity/acceleration), interior steps follow
    the speed profile, so the guess is feasible before optimization.
    """
    start = np.asarray(start, dtype=float).reshape(3)
    goal = np.asarray(goal, dtype=float).reshape(3)
    length = float(np.linalg.norm(goal - start))
    if length < 1e-9:
        return hover_trajectory(start, config.knot_interval, start_time)
    T = time_allocation(length, 0.0, limits, config.cruise_fraction)
    direction = (goal - start) / length
    v_nom = config.cruise_fraction * limits.v_max
    for _ in range(5):
        n_seg, dt = _segment_count(T, config.knot_interval, config)
        # moving steps sit between the two pinned boundary triplets
        n_move = (n_seg + 3) - 1 - 4
        mids = (np.arange(n_move) + 0.5) / n_move * T
        speeds = _trapezoid_speeds(mids, T, 0.0, length, v_nom, limits.a_max / 3)
        steps = speeds / speeds.sum() * length
        if steps.max() / dt <= 0.92 * limits.v_max:
            break
        T *= 1.2
    cumulative = np.cumsum(steps)
    dist = np.concatenate([[0.0, 0.0, 0.0], cumulative, [cumulative[-1]] * 2])
    ctrl = start[None, :] + dist[:, None] * direction[None, :]
    return BSplineTrajectory(ctrl, dt, start_time)


def hover_trajectory(
    position: np.ndarray, dt: float, start_time: float, n_seg: int = 6
) -> BSplineTrajectory:
    ctrl = np.tile(np.asarray(position, dtype=float).reshape(1, 3), (n_seg + 3, 1))
    return BSplineTrajectory(ctrl, dt, start_time)


def refit_guess(
    previous: BSplineTrajectory,
    now: float,
    local_goal: np.ndarray,
    config: AgentConfig,
    limits: PlannerLimits,
) -> BSplineTrajectory:
    """Initial guess from the remaining previous trajectory plus a straight
    extension to the (possibly moved) local goal, re-timed to a trapezoid.

    The fit pins the start control points to the executed state at `now`, so
    installing the optimized result keeps position/velocity/acceleration
    continuous.
    """
    t0, t1 = previous.domain
    now = min(max(now, t0), t1)
    vel_spline = previous.derivative()
    acc_spline = vel_spline.derivative()
    start_state = np.stack(
        [previous.position(now), vel_spline.position(now), acc_spline.position(now)]
    )
    local_goal = np.asarray(local_goal, dtype=float).reshape(3)

    # dense waypoint path: remaining spline then straight extension
    n_prev = max(2, int(np.ceil((t1 - now) / 0.05)))
    path = previous.position(np.linspace(now, t1, n_prev))
    gap = local_goal - path[-1]
    gap_len = np.linalg.norm(gap)
    if gap_len > 1e-6:
        n_ext = max(2, int(np.ceil(gap_len / 0.1)))
        ext = path[-1] + np.linspace(0, 1, n_ext)[1:, None] * gap[None, :]
        path = np.vstack([path, ext])
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    length = cum[-1]
    v0 = float(np.linalg.norm(start_state[1]))
    if length < 1e-6:
        return hover_trajectory(local_goal, config.knot_interval, now)

    T = max(time_allocation(length, v0, limits, config.cruise_fraction),
            6 * config.knot_interval)
    n_seg, dt = _segment_count(T, config.knot_interval, config)
    T = n_seg * dt
    times = np.linspace(0.0, T, 4 * n_seg + 1)
    v_nom = config.cruise_fraction * limits.v_max
    speeds = _trapezoid_speeds(times, T, v0, length, v_nom, limits.a_max / 3)
    s_of_t = np.concatenate([[0.0], np.cumsum((speeds[1:] + speeds[:-1]) / 2 * np.diff(times))])
    s_of_t = np.clip(s_of_t / max(s_of_t[-1], 1e-12) * length, 0.0, length)
    pts = np.stack([np.interp(s_of_t, cum, path[:, k]) for k in range(3)], axis=1)
    zero = np.zeros(3)
    return fit_trajectory(
        times + now, pts, dt, now, n_seg + 3,
        start_state=start_state,
        end_state=np.stack([local_goal, zero, zero]),
    )


def braking_trajectory(
    state_pos: np.ndarray,
    state_vel: np.ndarray,
    config: AgentConfig,
    limits: PlannerLimits,
    now: float,
) -> BSplineTrajectory:
    """Straight-line stop along the current velocity at reduced a_max."""
    speed = float(np.linalg.norm(state_vel))
    if speed < 1e-6:
        return hover_trajectory(state_pos, config.knot_interval, now)
    a_brake = 0.8 * limits.a_max
    t_stop = speed / a_brake
    d_stop = 0.5 * speed * t_stop
    direction = np.asarray(state_vel, dtype=float) / speed
    T = max(t_stop * 1.5, 6 * config.knot_interval)
    n_seg, dt = _segment_count(T, config.knot_interval, config)
    times = np.linspace(0.0, n_seg * dt, 4 * n_seg + 1)
    s = np.where(
        times < t_stop, speed * times - 0.5 * a_brake * times**2, d_stop
    )
    pts = state_pos[None, :] + s[:, None] * direction[None, :]
    zero = np.zeros(3)
    return fit_trajectory(
        times + now, pts, dt, now, n_seg + 3,
        start_state=np.stack([state_pos, state_vel, zero]),
        end_state=np.stack([pts[-1], zero, zero]),
    )


# -- the agent ----------------------------------------------------------------


@dataclass
class AgentState:
    id: int
    true_pose: np.ndarray
    goal: np.ndarray
    grid: OccupancyGrid
    config: AgentConfig = AgentConfig()
    limits: PlannerLimits = PlannerLimits()
    weights: CostWeights = CostWeights()
    yaw: float = 0.0
    drift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clock_skew: float = 0.0
    clock_correction: float = 0.0
    current_trajectory: BSplineTrajectory | None = None
    epoch: int = 0
    last_plan_time: float = -np.inf
    remote_trajectories: dict = field(default_factory=dict)
    remote_epochs: dict = field(default_factory=dict)
    drift_offsets: dict = field(default_factory=dict)
    consecutive_failures: int = 0
    done: bool = False

    def __post_init__(self):
        self.true_pose = np.asarray(self.true_pose, dtype=float).reshape(3).copy()
        self.goal = np.asarray(self.goal, dtype=float).reshape(3).copy()
        self.drift = np.asarray(self.drift, dtype=float).reshape(3).copy()

    @property
    def believed_pose(self) -> np.ndarray:
        return self.true_pose + self.drift

    def perceived_time(self, now: float) -> float:
        return now + self.clock_skew - self.clock_correction

    # -- inbox ------------------------------------------------------------

    def receive(self, sender: int, epoch: int, trajectory: BSplineTrajectory) -> bool:
        """Store a remote trajectory unless a newer epoch is already held."""
        if sender == self.id:
            return False
        if epoch < self.remote_epochs.get(sender, -1):
            return False
        self.remote_epochs[sender] = epoch
        self.remote_trajectories[sender] = trajectory
        return True

    def corrected_remote(self, sender: int) -> BSplineTrajectory:
        """Remote trajectory shifted into this agent's frame by the current
        drift estimate for that sender."""
        traj = self.remote_trajectories[sender]
        offset = self.drift_offsets.get(sender)
        if offset is None or not np.any(offset):
            return traj
        return traj.with_control_points(traj.control_points + np.asarray(offset))

    def constraint_set(self, now: float) -> SwarmConstraintSet:
        """Corrected remotes within planning range of the believed pose."""
        remotes = tuple(
            RemoteTrajectory(sender, self.corrected_remote(sender))
            for sender in sorted(self.remote_trajectories)
        )
        full = SwarmConstraintSet(
            remotes, clearance=self.config.clearance, ratio=self.config.ellipsoid_ratio
        )
        return full.filtered(
            self.believed_pose, self.config.planning_horizon, self.perceived_time(now)
        )

    # -- triggers ----------------------------------------------------------

    def select_local_goal(self) -> np.ndarray:
        delta = self.goal - self.believed_pose
        dist = float(np.linalg.norm(delta))
        if dist <= self.config.planning_horizon:
            return self.goal.copy()
        return self.believed_pose + delta * (self.config.planning_horizon / dist)

    def _remaining_collides(self, now: float) -> bool:
        traj = self.current_trajectory
        t0, t1 = traj.domain
        start = min(max(now, t0), t1)
        step = self.grid.resolution / (2 * self.limits.v_max)
        n = max(2, int(np.ceil((t1 - start) / step)) + 1)
        times = np.linspace(start, t1, n)
        return bool(np.any(self.grid.is_occupied(traj.position(times))))

    def _swarm_conflict(self, now: float) -> bool:
        traj = self.current_trajectory
        for sender in sorted(self.remote_trajectories):
            sep = min_swarm_separation(
                traj,
                self.corrected_remote(sender),
                self.config.ellipsoid_ratio,
                step=self.config.knot_interval / 2,
                t_start=now,
            )
            if sep < self.config.clearance:
                return True
        return False

    def _at_goal(self, now: float) -> bool:
        if np.linalg.norm(self.believed_pose - self.goal) > self.config.goal_tolerance:
            return False
        tail = self.current_trajectory.position(self.current_trajectory.end_time)
        return np.linalg.norm(tail - self.goal) <= self.config.goal_tolerance

    def should_replan(self, now: float) -> ReplanReason | None:
        """First applicable trigger, checked in severity order."""
        if self.current_trajectory is None:
            return ReplanReason.STARTUP
        pnow = self.perceived_time(now)
        if self._at_goal(pnow):
            return None
        if self._remaining_collides(pnow):
            return ReplanReason.OBSTACLE
        if self._swarm_conflict(pnow):
            return ReplanReason.SWARM
        t0, t1 = self.current_trajectory.domain
        if (t1 - pnow) < self.config.near_end_fraction * (t1 - t0):
            return ReplanReason.NEAR_END
        if now - self.last_plan_time >= self.config.replan_period:
            return ReplanReason.PERIODIC
        return None

    # -- planning ----------------------------------------------------------

    def replan(self, now: float) -> PlanResult:
        """Build a guess, optimize with variants, install on success.

        On failure the previous trajectory stays active; after two straight
        failures with a conflict ahead, a braking trajectory is installed so
        the agent stops instead of flying into the hazard.
        """
        pnow = self.perceived_time(now)
        local_goal = self.select_local_goal()
        if self.current_trajectory is None:
            guess = straight_line_guess(
                self.believed_pose, local_goal, self.config, self.limits, pnow
            )
        else:
            guess = refit_guess(
                self.current_trajectory, pnow, local_goal, self.config, self.limits
            )
        constraints = self.constraint_set(now)
        result = plan_with_variants(
            guess, self.grid, constraints, self.weights, self.limits, goal=local_goal
        )
        if result.success:
            self.install(result.trajectory, now)
            self.consecutive_failures = 0
        else:
            self.consecutive_failures += 1
            hazard = self.current_trajectory is None or self._remaining_collides(
                pnow
            ) or self._swarm_conflict(pnow)
            if self.consecutive_failures >= 2 and hazard:
                self.install(self._brake(pnow), now)
        return result

    def _brake(self, pnow: float) -> BSplineTrajectory:
        if self.current_trajectory is None:
            return hover_trajectory(self.believed_pose, self.config.knot_interval, pnow)
        vel = self.current_trajectory.velocity(
            min(max(pnow, self.current_trajectory.domain[0]), self.current_trajectory.end_time)
        )
        return braking_trajectory(self.believed_pose, vel, self.config, self.limits, pnow)

    def install(self, trajectory: BSplineTrajectory, now: float):
        self.current_trajectory = trajectory
        self.last_plan_time = now
        self.epoch += 1

    # -- execution -----------------------------------------------------------

    def execute_step(self, now: float) -> np.ndarray:
        """Ideal tracking in the believed frame; beyond the end, hold."""
        if self.current_trajectory is not None:
            t0, t1 = self.current_trajectory.domain
            t = min(max(self.perceived_time(now), t0), t1)
            believed = self.current_trajectory.position(t)
            self.true_pose = believed - self.drift
        return self.true_pose
