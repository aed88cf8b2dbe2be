import numpy as np

from swarmplan.bspline import BSplineTrajectory
from swarmplan.messages import TrajectoryMessage, MessageError, decode_message
from swarmplan import gridmap as gm

rng = np.random.default_rng(0)

# -- messages round trip
traj = BSplineTrajectory(rng.normal(size=(12, 3)), 0.35, start_time=2.25)
msg = TrajectoryMessage(agent_id=7, epoch=42, trajectory=traj)
blob = msg.encode()
print("msg bytes:", len(blob), "expect", 26 + 12 * 24 + 4)
assert len(blob) == 26 + 12 * 24 + 4 <= 512
back = decode_message(blob)
assert back.agent_id == 7 and back.epoch == 42
assert back.trajectory.control_points.tobytes() == traj.control_points.tobytes()
assert back.trajectory.knot_interval == 0.35 and back.trajectory.start_time == 2.25
try:
    TrajectoryMessage(1, 1, BSplineTrajectory(np.zeros((21, 3)), 0.5)).encode()
    raise SystemExit("oversize should fail")
except MessageError as e:
    print("oversize ok:", e)
corrupt = bytearray(blob)
corrupt[30] ^= 0xFF
try:
    decode_message(bytes(corrupt))
    raise SystemExit("corrupt should fail")
except MessageError as e:
    print("crc ok:", e)

# -- grid basics
g = gm.OccupancyGrid(0.1, (0, 0, 0), (40, 40, 20), inflation=0.3)
g.insert_points(np.array([[2.05, 2.05, 0.55]]))
assert g.is_occupied_raw([2.05, 2.05, 0.55])
assert not g.is_occupied_raw([2.25, 2.05, 0.55])
# inflation multiple of res: point at inflation - eps from the face is occupied
assert g.is_occupied([2.1 + 0.3 - 0.01, 2.05, 0.55])
assert not g.is_occupied([2.1 + 0.3 + 0.11, 2.05, 0.55])
assert not g.is_occupied([99.0, 99.0, 99.0])  # out of bounds reads free

# -- A* straight shot vs blocked
free = gm.find_safe_path(g, (0.15, 0.15, 0.55), (1.05, 0.15, 0.55))
assert free.shape == (2, 3)

wall = gm.OccupancyGrid(0.1, (0, 0, 0), (30, 30, 10), inflation=0.0)
idx = np.array([[15, j, k] for j in range(0, 25) for k in range(10)])
wall.set_occupied_indices(idx)
path = gm.find_safe_path(wall, (0.55, 0.55, 0.55), (2.45, 0.55, 0.55))
print("path pts:", len(path))
seg = np.diff(path, axis=0)
plen = np.linalg.norm(seg, axis=1).sum()
print("path len:", plen)
assert not np.any(wall.is_occupied(path))

try:
    boxed = gm.OccupancyGrid(0.1, (0, 0, 0), (10, 10, 5), 0.0)
    occ = np.ones((10, 10, 5), dtype=bool)
    occ[1, 1, 1] = occ[8, 8, 3] = False
    boxed = gm.OccupancyGrid(0.1, (0, 0, 0), (10, 10, 5), 0.0, occ)
    gm.find_safe_path(boxed, (0.15, 0.15, 0.15), (0.85, 0.85, 0.35))
    raise SystemExit("expected PathNotFound")
except gm.PathNotFound as e:
    print("notfound ok:", e)

# -- pv pairs around the wall
ctrl = np.stack([np.linspace(0.5, 2.5, 9), np.full(9, 0.55), np.full(9, 0.55)], axis=1)
traj2 = BSplineTrajectory(ctrl, 0.4)
runs = gm.colliding_runs(wall, ctrl)
print("runs:", runs)
gamma = gm.find_safe_path(wall, ctrl[0], ctrl[-1])
pairs = gm.generate_pv_pairs(wall, traj2, gamma)
for p in pairs:
    d = p.distance(ctrl[p.owner_index])
    assert d < 0, d
    assert not wall.is_occupied_raw(p.anchor + p.direction * 0.051)
    print(f"  pair ctrl {p.owner_index}: d={d:+.3f} anchor={p.anchor.round(3)}")

seg = gm.first_colliding_segment(wall, traj2, v_max=2.0)
print("colliding segment:", seg)
assert seg is not None and seg[0] < seg[1]
free_traj = BSplineTrajectory(ctrl - np.array([0.0, 0.0, 10.0]), 0.4)
assert gm.first_colliding_segment(wall, free_traj, 2.0) is None

# -- snapshot round trip
gm.save_grid(wall, "/tmp/wall.grid")
back_grid = gm.load_grid("/tmp/wall.grid")
assert np.array_equal(back_grid.occupancy, wall.occupancy)
assert np.array_equal(back_grid.inflated, wall.inflated)
assert back_grid.resolution == wall.resolution
print("snapshot ok")

# -- reveal
known = wall.copy_empty()
known.reveal_from(wall, np.array([1.5, 0.55, 0.55]), 1.0)
assert known.occupancy.sum() > 0
assert known.occupancy.sum() < wall.occupancy.sum()
assert not np.any(known.occupancy & ~wall.occupancy)
print("reveal ok:", known.occupancy.sum(), "of", wall.occupancy.sum())

print("ALL GRIDMAP/MESSAGES SMOKE OK")
