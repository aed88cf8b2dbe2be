"""Simulated depth camera: pinhole projection, ray-marched rendering, and
conservative trust-region projection.

Conventions are the usual computer-vision ones: camera frame has z forward,
x right, y down; a world point s maps through z [s' 1]^T = K T_c_w [s 1]^T
where T_c_w = (R, t) and depth z is measured along the optical axis.  The
depth image uses +inf for background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SENTINEL = np.inf


@dataclass(frozen=True)
class PixelEllipse:
    """Axis-aligned ellipse in pixel coordinates (center, semi-axes)."""

    cu: float
    cv: float
    ru: float
    rv: float

    def contains(self, u, v):
        return ((u - self.cu) / self.ru) ** 2 + ((v - self.cv) / self.rv) ** 2 <= 1.0

    def bounding_box(self, width: int, height: int):
        """Integer pixel bounds clipped to the image, or None when outside."""
        u0 = max(int(np.floor(self.cu - self.ru)), 0)
        u1 = min(int(np.ceil(self.cu + self.ru)), width - 1)
        v0 = max(int(np.floor(self.cv - self.rv)), 0)
        v1 = min(int(np.ceil(self.cv + self.rv)), height - 1)
        if u0 > u1 or v0 > v1:
            return None
        return u0, u1, v0, v1


@dataclass(frozen=True)
class CameraModel:
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    max_depth: float = 10.0

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=float).reshape(3, 3)
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= K[0, 2] < self.width and 0 <= K[1, 2] < self.height):
            raise ValueError("principal point must lie inside the image")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or not np.isclose(
            np.linalg.det(R), 1.0, atol=1e-9
        ):
            raise ValueError("rotation must be orthonormal with determinant +1")
        for name, arr in (("intrinsics", K), ("rotation", R), ("translation", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_pose(
        cls,
        position,
        yaw: float,
        width: int = 160,
        height: int = 120,
        fov_h: float = 90.0,
        fov_v: float = 70.0,
        max_depth: float = 10.0,
    ) -> "CameraModel":
        """Camera at a body position looking along the yaw heading (level)."""
        fx = (width / 2) / np.tan(np.radians(fov_h) / 2)
        fy = (height / 2) / np.tan(np.radians(fov_v) / 2)
        K = np.array([[fx, 0.0, width / 2], [0.0, fy, height / 2], [0.0, 0.0, 1.0]])
        c, s = np.cos(yaw), np.sin(yaw)
        # camera axes in world coordinates: z = heading, x = right, y = down
        forward = np.array([c, s, 0.0])
        right = np.array([s, -c, 0.0])
        down = np.array([0.0, 0.0, -1.0])
        R = np.stack([right, down, forward])  # world -> camera rows
        t = -R @ np.asarray(position, dtype=float).reshape(3)
        return cls(K, R, t, width, height, max_depth)

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.rotation.T + self.translation

    def project(self, points: np.ndarray):
        """(pixels (n,2), depths (n,)) of world points; depth <= 0 is behind."""
        cam = self.to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.intrinsics[0, 0] * cam[:, 0] / z + self.intrinsics[0, 2]
            v = self.intrinsics[1, 1] * cam[:, 1] / z + self.intrinsics[1, 2]
        return np.stack([u, v], axis=1), z

    def back_project(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """World points of pixel/depth samples (inverse of project)."""
        px = np.atleast_2d(np.asarray(pixels, dtype=float))
        z = np.atleast_1d(np.asarray(depths, dtype=float))
        x = (px[:, 0] - self.intrinsics[0, 2]) / self.intrinsics[0, 0] * z
        y = (px[:, 1] - self.intrinsics[1, 2]) / self.intrinsics[1, 1] * z
        cam = np.stack([x, y, z], axis=1)
        return (cam - self.translation) @ self.rotation


def pixel_rays(camera: CameraModel):
    """Unit world-frame ray directions and per-ray z scale for every pixel.

    Returns (directions (h*w, 3), axis_scale (h*w,)) where axis_scale converts
    distance along the ray into optical-axis depth.
    """
    u, v = np.meshgrid(np.arange(camera.width) + 0.5, np.arange(camera.height) + 0.5)
    x = (u.ravel() - camera.intrinsics[0, 2]) / camera.intrinsics[0, 0]
    y = (v.ravel() - camera.intrinsics[1, 2]) / camera.intrinsics[1, 1]
    cam_dirs = np.stack([x, y, np.ones_like(x)], axis=1)
    norms = np.linalg.norm(cam_dirs, axis=1)
    cam_dirs /= norms[:, None]
    world_dirs = cam_dirs @ camera.rotation
    return world_dirs, 1.0 / norms


def render_depth(camera: CameraModel, grid, agents=()) -> np.ndarray:
    """Nearest-hit depth image of the occupancy grid plus agent spheres.

    Grid hits come from lockstep ray marching at half-resolution steps; agent
    spheres are intersected analytically.  agents is an iterable of
    (agent id, center, radius); background pixels read +inf.
    """
    n_px = camera.width * camera.height
    depth = np.full(n_px, SENTINEL)
    dirs, axis_scale = pixel_rays(camera)
    origin = camera.position

    if grid is not None and grid.occupancy.any():
        step = grid.resolution / 2
        max_range = camera.max_depth / axis_scale.min()
        active = np.arange(n_px)
        s = step
        while s <= max_range and len(active):
            pts = origin[None, :] + s * dirs[active]
            hit = grid.is_occupied_raw(pts)
            if hit.any():
                hit_idx = active[hit]
                z = s * axis_scale[hit_idx]
                depth[hit_idx] = np.where(z <= camera.max_depth, z, SENTINEL)
                active = active[~hit]
            s += step

    for _, center, radius in agents:
        rel = np.asarray(center, dtype=float) - origin
        b = dirs @ rel
        disc = b**2 - (rel @ rel - radius**2)
        ok = disc >= 0
        root = np.sqrt(np.where(ok, disc, 0.0))
        t_hit = b - root
        ok &= t_hit > 0
        z = t_hit * axis_scale
        ok &= z <= camera.max_depth
        nearer = ok & (z < depth)
        depth[nearer] = z[nearer]

    return depth.reshape(camera.height, camera.width)


def project_trust_region(
    camera: CameraModel, center: np.ndarray, radius: float
) -> PixelEllipse | None:
    """Conservative axis-aligned pixel ellipse covering a sphere's projection.

    Interval bounds on the projection of every ball point give a rectangle;
    the ellipse takes those half-widths times sqrt(2) so it contains the
    rectangle.  Returns None when the sphere lies behind the image plane, and
    a whole-image ellipse when the camera is inside the sphere.
    """
    cam = camera.to_camera(center)[0]
    z = cam[2]
    if z + radius <= 0:
        return None
    pixels, _ = camera.project(np.asarray(center, dtype=float)[None, :])
    if z - radius <= 1e-6:
        return PixelEllipse(
            camera.width / 2, camera.height / 2, camera.width * 2.0, camera.height * 2.0
        )
    fx, fy = camera.intrinsics[0, 0], camera.intrinsics[1, 1]
    zr = z - radius
    ru = np.sqrt(2.0) * fx * radius / zr * (1.0 + abs(cam[0]) / z)
    rv = np.sqrt(2.0) * fy * radius / zr * (1.0 + abs(cam[1]) / z)
    return PixelEllipse(float(pixels[0, 0]), float(pixels[0, 1]), float(ru), float(rv))


def write_pgm(depth: np.ndarray, path, max_depth: float = 10.0):
    """Debug dump: depth scaled to 16-bit gray, background white."""
    scaled = np.where(np.isfinite(depth), np.clip(depth / max_depth, 0, 1), 1.0)
    img = (scaled * 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5 {depth.shape[1]} {depth.shape[0]} 65535\n".encode())
        f.write(img.tobytes())
