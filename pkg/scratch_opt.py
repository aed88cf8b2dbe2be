import time

import numpy as np

from swarmplan.bspline import BSplineTrajectory
from swarmplan.costs import CostWeights, RemoteTrajectory, SwarmConstraintSet, min_swarm_separation
from swarmplan.gridmap import OccupancyGrid
from swarmplan.optimizer import (
    PlannerLimits,
    build_pairs,
    optimize,
    plan_with_variants,
    spawn_topological_variant,
)


from swarmplan.agent import AgentConfig, straight_line_guess

_cfg = AgentConfig()


def straight_guess(start, goal, dt=0.5, v_ref=None):
    return straight_line_guess(start, goal, _cfg, PlannerLimits(v_max=2.0, a_max=6.0))


limits = PlannerLimits(v_max=2.0, a_max=6.0)
weights = CostWeights()
empty = OccupancyGrid(0.1, (-12, -12, 0), (240, 240, 30), inflation=0.2)
no_swarm = SwarmConstraintSet((), clearance=0.8, ratio=4.0)

# 1. empty world straight
guess = straight_guess((-5, 0, 1), (5, 0, 1))
res = optimize(guess, empty, no_swarm, weights, limits, goal=np.array([5, 0, 1.0]))
ts = np.linspace(*res.trajectory.domain, 50)
pos = res.trajectory.position(ts)
dev = np.abs(pos[:, 1]).max() + np.abs(pos[:, 2] - 1).max()
print("empty:", res.success, res.reason, "iters", res.iterations, "dev", dev)
assert res.success and dev < 0.05
assert np.allclose(res.trajectory.control_points[:3], guess.control_points[:3])
assert np.allclose(res.trajectory.control_points[-3:], guess.control_points[-3:])

# 2. slab between start and goal
slab = OccupancyGrid(0.1, (-12, -12, 0), (240, 240, 30), inflation=0.2)
idx = np.array(
    [[i, j, k] for i in (118, 119, 120, 121) for j in range(90, 150) for k in range(0, 18)]
)
slab.set_occupied_indices(idx)
guess2 = straight_guess((-4, 0, 1), (4, 0, 1))
assert len(build_pairs(slab, guess2, limits)) > 0
res2 = optimize(guess2, slab, no_swarm, weights, limits, goal=np.array([4, 0, 1.0]))
print("slab:", res2.success, res2.reason, "iters", res2.iterations, "rebuilds", res2.rebuilds)
assert res2.success, res2.reason

# 3. head-on swarm avoidance
own0 = straight_guess((-5, 0.05, 1), (5, 0.05, 1), dt=0.5)
other = straight_guess((5, -0.05, 1), (-5, -0.05, 1), dt=0.5)
cs = SwarmConstraintSet((RemoteTrajectory(1, other),), clearance=0.8, ratio=4.0)
res3 = optimize(own0, empty, cs, weights, limits, goal=np.array([5, 0.05, 1.0]))
sep = min_swarm_separation(res3.trajectory, other, 4.0, step=0.25)
print("head-on:", res3.success, res3.reason, "sep", sep)
assert sep >= 0.8, sep

# 4. variants around a pillar
pillar = OccupancyGrid(0.1, (-12, -12, 0), (240, 240, 30), inflation=0.2)
pidx = np.array([[i, j, k] for i in (118, 119, 120, 121) for j in (118, 119, 120, 121) for k in range(30)])
pillar.set_occupied_indices(pidx)
guess4 = straight_guess((-3, 0.02, 1), (3, 0.02, 1))
base_pairs = build_pairs(pillar, guess4, limits)
var_pairs = spawn_topological_variant(base_pairs, pillar, guess4.control_points, limits.max_march)
print("pairs:", len(base_pairs), "variant:", None if var_pairs is None else len(var_pairs))
assert var_pairs is not None
for bp, vp in zip(base_pairs, var_pairs):
    assert np.allclose(vp.direction, -bp.direction)

best = plan_with_variants(guess4, pillar, no_swarm, weights, limits, goal=np.array([3, 0.02, 1.0]))
print("variant candidates:", len(best.candidates), [f"{r.cost:.3f}/{r.success}" for r in best.candidates])
assert best.cost == min(r.cost for r in best.candidates if r.success)
if len(best.candidates) == 2 and all(r.success for r in best.candidates):
    p0 = base_pairs[len(base_pairs) // 2]
    t_mid = 0.5 * sum(best.candidates[0].trajectory.domain)
    s_base = np.dot(best.candidates[0].trajectory.position(t_mid) - p0.anchor, p0.direction)
    s_var = np.dot(best.candidates[1].trajectory.position(t_mid) - p0.anchor, p0.direction)
    print("side signs:", s_base, s_var)
    assert s_base * s_var < 0

# 5. timing with 7 remotes
rng = np.random.default_rng(7)
remotes = []
for k in range(7):
    a = rng.normal(size=3) * 3 + [0, 0, 2]
    b = rng.normal(size=3) * 3 + [0, 0, 2]
    remotes.append(RemoteTrajectory(k + 1, straight_guess(a, b)))
cs7 = SwarmConstraintSet(tuple(remotes), clearance=0.8, ratio=4.0)
guess5 = straight_guess((-5, 0.3, 2), (5, -0.4, 2))
t0 = time.perf_counter()
n_rep = 20
for _ in range(n_rep):
    res5 = optimize(guess5, empty, cs7, weights, limits, goal=np.array([5, -0.4, 2.0]))
dt_ms = (time.perf_counter() - t0) / n_rep * 1e3
print(f"timing: {dt_ms:.2f} ms/plan, iters {res5.iterations}, success {res5.success}")

print("ALL OPTIMIZER SMOKE OK")
