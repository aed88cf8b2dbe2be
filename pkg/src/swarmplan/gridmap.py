"""Static-obstacle world model: occupancy grid, path search, {p, v} pairs.

The grid stores raw occupancy plus an inflated layer dilated by the agent
radius.  Inflation uses the center-to-center metric: a voxel is inflated-
occupied when its center lies within the inflation radius of an occupied
voxel center.  Points outside the grid bounds are treated as free so the
local planner is never blocked by unobserved space.
"""

from __future__ import annotations

import heapq
import logging
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import ndimage

from swarmplan.bspline import BSplineTrajectory

log = logging.getLogger(__name__)


class PathNotFound(RuntimeError):
    """No collision-free route exists in the known grid."""


@dataclass(frozen=True)
class PvPair:
    """Obstacle anchor point and outward safe direction for one control point.

    distance(q) = (q - anchor) . direction is the signed planar obstacle
    distance; positive values are on the safe side.
    """

    anchor: np.ndarray
    direction: np.ndarray
    owner_index: int
    obstacle_id: int = 0

    def __post_init__(self):
        a = np.asarray(self.anchor, dtype=float).reshape(3).copy()
        d = np.asarray(self.direction, dtype=float).reshape(3).copy()
        norm = np.linalg.norm(d)
        if not norm > 0:
            raise ValueError("direction must be nonzero")
        d /= norm
        a.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "direction", d)

    def distance(self, q: np.ndarray) -> float:
        return float(np.dot(np.asarray(q, dtype=float) - self.anchor, self.direction))

    def inverted(self, anchor: np.ndarray, obstacle_id: int) -> "PvPair":
        return PvPair(anchor, -self.direction, self.owner_index, obstacle_id)


def distance_to_obstacle(pair: PvPair, q: np.ndarray) -> float:
    """Signed planar distance (q - p) . v of a point to the pair's obstacle."""
    return pair.distance(q)


@lru_cache(maxsize=None)
def _ball_offsets(radius_vox: float) -> np.ndarray:
    """Integer voxel offsets within a Euclidean radius (in voxel units)."""
    r = int(np.floor(radius_vox + 1e-9))
    if r <= 0:
        return np.zeros((1, 3), dtype=np.int64)
    ax = np.arange(-r, r + 1)
    dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
    off = np.stack([dx.ravel(), dy.ravel(), dz.ravel()], axis=1)
    keep = np.einsum("ij,ij->i", off, off) <= radius_vox**2 + 1e-9
    return off[keep]


class OccupancyGrid:
    """Axis-aligned 3-D voxel grid of static obstacles."""

    def __init__(
        self,
        resolution: float,
        origin,
        dims,
        inflation: float = 0.0,
        occupancy: np.ndarray | None = None,
    ):
        if not resolution > 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive counts, got {dims}")
        if inflation < 0:
            raise ValueError("inflation must be non-negative")
        self.resolution = float(resolution)
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.dims = dims
        self.inflation = float(inflation)
        if occupancy is None:
            self.occupancy = np.zeros(dims, dtype=bool)
        else:
            occupancy = np.asarray(occupancy, dtype=bool)
            if occupancy.shape != dims:
                raise ValueError("occupancy shape does not match dims")
            self.occupancy = occupancy.copy()
        self._rebuild_inflated()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def empty(cls, resolution, origin, size, inflation=0.0) -> "OccupancyGrid":
        """Grid covering an axis-aligned box given by origin and metric size."""
        dims = np.maximum(1, np.ceil(np.asarray(size, float) / resolution)).astype(int)
        return cls(resolution, origin, dims, inflation)

    def copy_empty(self) -> "OccupancyGrid":
        """Same extent and inflation, no occupancy (per-agent sensed map)."""
        return OccupancyGrid(self.resolution, self.origin, self.dims, self.inflation)

    def _rebuild_inflated(self):
        radius_vox = self.inflation / self.resolution
        if radius_vox < 1.0:
            self.inflated = self.occupancy.copy()
            return
        off = _ball_offsets(radius_vox)
        r = int(np.abs(off).max())
        structure = np.zeros((2 * r + 1,) * 3, dtype=bool)
        structure[tuple((off + r).T)] = True
        self.inflated = ndimage.binary_dilation(self.occupancy, structure=structure)

    # -- coordinate mapping ---------------------------------------------------

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.floor((pts - self.origin) / self.resolution).astype(np.int64)

    def index_to_center(self, idx: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def in_bounds_index(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)

    def in_bounds(self, points: np.ndarray) -> np.ndarray:
        return self.in_bounds_index(self.world_to_index(points))

    # -- occupancy queries ----------------------------------------------------

    def _lookup(self, grid: np.ndarray, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        idx = self.world_to_index(np.atleast_2d(pts))
        ok = self.in_bounds_index(idx)
        out = np.zeros(len(idx), dtype=bool)
        if ok.any():
            sel = idx[ok]
            out[ok] = grid[sel[:, 0], sel[:, 1], sel[:, 2]]
        return bool(out[0]) if scalar else out

    def is_occupied(self, points):
        """Inflated occupancy at world point(s); out-of-bounds reads free."""
        return self._lookup(self.inflated, points)

    def is_occupied_raw(self, points):
        """Raw (uninflated) occupancy, used by ground-truth audits."""
        return self._lookup(self.occupancy, points)

    # -- mutation ---------------------------------------------------------------

    def set_occupied_indices(self, idx: np.ndarray):
        """Mark voxels occupied and update the inflated layer incrementally."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        idx = idx[self.in_bounds_index(idx)]
        if len(idx) == 0:
            return
        self.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        off = _ball_offsets(self.inflation / self.resolution)
        grown = (idx[:, None, :] + off[None, :, :]).reshape(-1, 3)
        grown = grown[self.in_bounds_index(grown)]
        self.inflated[grown[:, 0], grown[:, 1], grown[:, 2]] = True

    def insert_points(self, points: np.ndarray):
        """Mark the voxels containing the given world points as occupied."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if len(pts) == 0:
            return
        idx = self.world_to_index(pts)
        idx = idx[self.in_bounds_index(idx)]
        if len(idx):
            self.set_occupied_indices(np.unique(idx, axis=0))

    def reveal_from(self, truth: "OccupancyGrid", center: np.ndarray, radius: float):
        """Copy occupied voxels of a ground-truth grid within sensing range.

        Cheap stand-in for depth-image fusion in large benchmark scenarios;
        the camera pipeline in the drift module does the real thing.
        """
        lo = np.maximum(self.world_to_index(np.asarray(center) - radius), 0)
        hi = np.minimum(
            self.world_to_index(np.asarray(center) + radius) + 1, np.asarray(self.dims)
        )
        if np.any(lo >= hi):
            return
        sl = tuple(slice(l, h) for l, h in zip(lo, hi))
        new = truth.occupancy[sl] & ~self.occupancy[sl]
        if not new.any():
            return
        idx = np.argwhere(new) + lo
        centers = self.index_to_center(idx)
        within = np.linalg.norm(centers - np.asarray(center), axis=1) <= radius
        if within.any():
            self.set_occupied_indices(idx[within])


# -- A* path search --------------------------------------------------------------


@lru_cache(maxsize=1)
def _neighbor_table() -> tuple[np.ndarray, np.ndarray]:
    ax = np.arange(-1, 2)
    dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
    off = np.stack([dx.ravel(), dy.ravel(), dz.ravel()], axis=1)
    off = off[np.any(off != 0, axis=1)]
    cost = np.linalg.norm(off, axis=1)
    return off.astype(np.int64), cost


@njit(cache=True)
def _astar_impl(occ, nx, ny, nz, start, goal, offsets, step_costs):
    """A* over free voxels of a flattened grid; returns flat path or empty.

    26-connected moves cost their Euclidean length; the heap orders by
    (f, flat index) so ties break toward the lower voxel index.
    """
    total = nx * ny * nz
    g = np.full(total, np.inf)
    parent = np.full(total, -1, dtype=np.int64)
    closed = np.zeros(total, dtype=np.bool_)

    gx = goal // (ny * nz)
    gy = (goal // nz) % ny
    gz = goal % nz

    g[start] = 0.0
    sx = start // (ny * nz)
    sy = (start // nz) % ny
    sz = start % nz
    h0 = np.sqrt(float((sx - gx) ** 2 + (sy - gy) ** 2 + (sz - gz) ** 2))
    heap = [(h0, start)]
    while len(heap) > 0:
        f, node = heapq.heappop(heap)
        if closed[node]:
            continue
        closed[node] = True
        if node == goal:
            break
        x = node // (ny * nz)
        y = (node // nz) % ny
        z = node % nz
        for k in range(offsets.shape[0]):
            xx = x + offsets[k, 0]
            yy = y + offsets[k, 1]
            zz = z + offsets[k, 2]
            if xx < 0 or xx >= nx or yy < 0 or yy >= ny or zz < 0 or zz >= nz:
                continue
            nb = (xx * ny + yy) * nz + zz
            if occ[nb] or closed[nb]:
                continue
            cand = g[node] + step_costs[k]
            if cand < g[nb]:
                g[nb] = cand
                parent[nb] = node
                h = np.sqrt(float((xx - gx) ** 2 + (yy - gy) ** 2 + (zz - gz) ** 2))
                heapq.heappush(heap, (cand + h, nb))

    if not closed[goal]:
        return np.empty(0, dtype=np.int64), -1.0
    out = []
    node = goal
    while node != -1:
        out.append(node)
        node = parent[node]
    path = np.empty(len(out), dtype=np.int64)
    for i in range(len(out)):
        path[i] = out[len(out) - 1 - i]
    return path, g[goal]


def shortest_voxel_path(grid: OccupancyGrid, start_idx, goal_idx):
    """(voxel index array, metric length) of the shortest 26-connected path."""
    nx, ny, nz = grid.dims
    start = int((start_idx[0] * ny + start_idx[1]) * nz + start_idx[2])
    goal = int((goal_idx[0] * ny + goal_idx[1]) * nz + goal_idx[2])
    occ = grid.inflated.ravel()
    if occ[start] or occ[goal]:
        raise PathNotFound("endpoint voxel is occupied")
    offsets, costs = _neighbor_table()
    flat, dist = _astar_impl(occ, nx, ny, nz, start, goal, offsets, costs)
    if dist < 0:
        raise PathNotFound("no free route between the given voxels")
    idx = np.empty((len(flat), 3), dtype=np.int64)
    idx[:, 0] = flat // (ny * nz)
    idx[:, 1] = (flat // nz) % ny
    idx[:, 2] = flat % nz
    return idx, float(dist) * grid.resolution


def _segment_free(grid: OccupancyGrid, a: np.ndarray, b: np.ndarray) -> bool:
    n = max(2, int(np.ceil(np.linalg.norm(b - a) / (grid.resolution / 2))) + 1)
    pts = a[None, :] + np.linspace(0.0, 1.0, n)[:, None] * (b - a)[None, :]
    return not np.any(grid.is_occupied(pts))


def find_safe_path(grid: OccupancyGrid, a, b) -> np.ndarray:
    """Collision-free polyline from a to b through free voxels.

    Returns the straight segment when it is already free; otherwise an A*
    route over the inflated grid.  Raises PathNotFound when no route exists.
    """
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    if grid.is_occupied(a) or grid.is_occupied(b):
        raise PathNotFound("path endpoints must lie in free space")
    if _segment_free(grid, a, b):
        return np.stack([a, b])
    ia, ib = grid.world_to_index(a), grid.world_to_index(b)
    if not (grid.in_bounds_index(ia) and grid.in_bounds_index(ib)):
        # endpoints outside the known grid but the straight line is blocked:
        # clamp to the nearest in-bounds voxel before searching
        ia = np.clip(ia, 0, np.asarray(grid.dims) - 1)
        ib = np.clip(ib, 0, np.asarray(grid.dims) - 1)
    voxels, _ = shortest_voxel_path(grid, ia, ib)
    centers = grid.index_to_center(voxels)
    return np.vstack([a[None, :], centers[1:-1], b[None, :]])


def polyline_point(polyline: np.ndarray, fraction: float) -> np.ndarray:
    """Point at a normalized arc-length fraction along a polyline."""
    seg = np.diff(polyline, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    total = lengths.sum()
    if total == 0:
        return polyline[0].copy()
    target = np.clip(fraction, 0.0, 1.0) * total
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    k = int(np.searchsorted(cum, target, side="right") - 1)
    k = min(k, len(seg) - 1)
    rem = target - cum[k]
    return polyline[k] + seg[k] * (rem / lengths[k] if lengths[k] > 0 else 0.0)


def march_to_free(
    grid: OccupancyGrid,
    start: np.ndarray,
    direction: np.ndarray,
    max_march: float = 5.0,
) -> np.ndarray | None:
    """March from inside an obstacle along a ray to the first free boundary.

    Steps resolution/2 at a time, then bisects the last occupied/free bracket.
    Returns None when the ray leaves the grid or the march budget first.
    """
    step = grid.resolution / 2
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    start = np.asarray(start, dtype=float)
    prev = start
    dist = step
    while dist <= max_march:
        probe = start + direction * dist
        inside = grid.in_bounds(probe)
        if not inside:
            return None
        if not grid.is_occupied(probe):
            lo, hi = prev, probe
            for _ in range(8):
                mid = 0.5 * (lo + hi)
                if grid.is_occupied(mid):
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        prev = probe
        dist += step
    return None


def march_through(
    grid: OccupancyGrid,
    start: np.ndarray,
    direction: np.ndarray,
    max_march: float = 5.0,
) -> np.ndarray | None:
    """March along a ray through an obstacle to the exit on its far side.

    Unlike march_to_free the start may lie on or outside the surface: free
    leading samples are skipped until the ray enters the obstacle, then the
    first occupied-to-free crossing is bisected.  Returns None when the ray
    never enters an obstacle, leaves the grid, or exhausts the march budget.
    """
    step = grid.resolution / 2
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    start = np.asarray(start, dtype=float)
    entered = bool(grid.is_occupied(start))
    prev = start
    dist = step
    while dist <= max_march:
        probe = start + direction * dist
        if not grid.in_bounds(probe):
            return None
        occupied = grid.is_occupied(probe)
        if occupied:
            entered = True
        elif entered:
            lo, hi = prev, probe
            for _ in range(8):
                mid = 0.5 * (lo + hi)
                if grid.is_occupied(mid):
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        prev = probe
        dist += step
    return None


def colliding_runs(grid: OccupancyGrid, ctrl_pts: np.ndarray) -> list[tuple[int, int]]:
    """Maximal index runs [i0, i1] of control points inside inflated obstacles."""
    occ = np.atleast_1d(grid.is_occupied(ctrl_pts))
    runs = []
    i = 0
    n = len(occ)
    while i < n:
        if occ[i]:
            j = i
            while j + 1 < n and occ[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    return runs


def generate_pv_pairs(
    grid: OccupancyGrid,
    traj: BSplineTrajectory,
    gamma: np.ndarray,
    run: tuple[int, int] | None = None,
    max_march: float = 5.0,
    first_obstacle_id: int = 0,
) -> list[PvPair]:
    """{p, v} pairs for the colliding control points bypassed by path gamma.

    Each colliding control point maps to the gamma point at the matching
    normalized arc-length fraction; v points from the control point toward
    that gamma point and p is the first obstacle-exit crossing along v.
    Control points whose march leaves the grid are skipped with a logged
    diagnostic.
    """
    pts = traj.control_points
    if run is None:
        runs = colliding_runs(grid, pts)
        if not runs:
            return []
        run = runs[0]
    i0, i1 = run
    pairs = []
    span = i1 - i0 + 2
    for i in range(i0, i1 + 1):
        frac = (i - i0 + 1) / span
        target = polyline_point(gamma, frac)
        direction = target - pts[i]
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            log.debug("pv skip ctrl %d: degenerate direction", i)
            continue
        anchor = march_to_free(grid, pts[i], direction / norm, max_march)
        if anchor is None:
            log.debug("pv skip ctrl %d: march left grid before exiting obstacle", i)
            continue
        pairs.append(PvPair(anchor, direction / norm, i, first_obstacle_id))
    return pairs


def first_colliding_segment(
    grid: OccupancyGrid, traj: BSplineTrajectory, v_max: float
) -> tuple[float, float] | None:
    """Earliest maximal time interval where sampled positions are occupied.

    Sampling step is resolution / v_max so no crossing thinner than one
    voxel at top speed is missed.
    """
    t0, t1 = traj.domain
    step = grid.resolution / max(v_max, 1e-9)
    n = max(2, int(np.ceil((t1 - t0) / step)) + 1)
    times = np.linspace(t0, t1, n)
    occ = np.atleast_1d(grid.is_occupied(traj.position(times)))
    if not occ.any():
        return None
    first = int(np.argmax(occ))
    last = first
    while last + 1 < n and occ[last + 1]:
        last += 1
    return float(times[first]), float(times[last])


# -- snapshot file -----------------------------------------------------------------

_SNAP_MAGIC = b"SWGR"
_SNAP_HEAD = struct.Struct("<4sBd3d3Id")


def save_grid(grid: OccupancyGrid, path):
    """Write a grid snapshot: header plus run-length-encoded occupancy."""
    flat = grid.occupancy.ravel()
    # run boundaries of the flattened occupancy
    change = np.flatnonzero(np.diff(flat.view(np.int8))) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [flat.size]])
    with open(path, "wb") as f:
        f.write(
            _SNAP_HEAD.pack(
                _SNAP_MAGIC, 1, grid.resolution, *grid.origin, *grid.dims, grid.inflation
            )
        )
        for s, e in zip(starts, ends):
            f.write(struct.pack("<BI", int(flat[s]), e - s))


def load_grid(path) -> OccupancyGrid:
    with open(path, "rb") as f:
        data = f.read()
    magic, version, res, ox, oy, oz, nx, ny, nz, inflation = _SNAP_HEAD.unpack_from(data)
    if magic != _SNAP_MAGIC or version != 1:
        raise ValueError("not a grid snapshot file")
    total = nx * ny * nz
    flat = np.empty(total, dtype=bool)
    pos = _SNAP_HEAD.size
    filled = 0
    while filled < total:
        val, count = struct.unpack_from("<BI", data, pos)
        pos += 5
        flat[filled : filled + count] = bool(val)
        filled += count
    return OccupancyGrid(res, (ox, oy, oz), (nx, ny, nz), inflation, flat.reshape(nx, ny, nz))
