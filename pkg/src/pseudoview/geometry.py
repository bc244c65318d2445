"""Cameras, rays, projection, and depth-guided image warping.

Conventions used throughout the package:

* Camera frame is right-handed with +x right, +y down, +z forward.
* Poses are camera-to-world: ``x_world = R @ x_cam + t``; the camera center
  in world coordinates is ``t``.
* Pixel coordinates are continuous ``(x, y)`` with x along image width and
  y along height; integer pixel ``(ix, iy)`` is sampled at its center
  ``(ix + 0.5, iy + 0.5)``. Image arrays are indexed ``[iy, ix]``.
* Depth maps store the distance traveled along the unit ray ("ray depth"),
  not the camera-frame z. ``project`` returns camera z; use
  ``ray_depth_scale`` to convert between the two per pixel. Non-positive or
  non-finite depth map entries mean "invalid".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Shared pinhole intrinsics (single set per dataset)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        return Pose(m[:3, :3], m[:3, 3])


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length within 1e-12")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def relative_pose(pose_a: Pose, pose_b: Pose) -> Pose:
    """Rigid transform taking A-camera coordinates to B-camera coordinates."""
    return pose_b.inverse().compose(pose_a)


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose at ``eye`` looking toward ``target``.

    Image "up" aligns with the world ``up`` direction; if the view direction
    is (anti)parallel to ``up``, a +y fallback keeps the frame well defined.
    """
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    forward = np.asarray(target, dtype=np.float64).reshape(3) - eye
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("look_at target coincides with the eye position")
    z = forward / n
    up = np.asarray(up, dtype=np.float64).reshape(3)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def ray_for_pixel(intr: Intrinsics, pose: Pose, px: tuple[float, float]) -> Ray:
    """World-space ray through continuous pixel coordinate ``px``.

    ``px`` follows the pixel-center convention documented at module level:
    pass ``(ix + 0.5, iy + 0.5)`` to shoot through the center of integer
    pixel ``(ix, iy)``.
    """
    x, y = float(px[0]), float(px[1])
    if not (0.0 <= x <= intr.width and 0.0 <= y <= intr.height):
        raise ValueError(f"pixel ({x}, {y}) outside {intr.width}x{intr.height} image bounds")
    d_cam = np.array([(x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0])
    d_world = pose.rotation @ d_cam
    return Ray(pose.center, d_world / np.linalg.norm(d_world))


def ray_depth_scale(intr: Intrinsics, px: tuple[float, float]) -> float:
    """Factor turning camera z into distance along the unit pixel ray."""
    x, y = float(px[0]), float(px[1])
    return float(np.sqrt(((x - intr.cx) / intr.fx) ** 2 + ((y - intr.cy) / intr.fy) ** 2 + 1.0))


def project(intr: Intrinsics, world_from_cam: Pose, point: np.ndarray) -> tuple[tuple[float, float], float]:
    """Perspective-project a world point. Returns ((x, y), camera z)."""
    p_cam = world_from_cam.rotation.T @ (np.asarray(point, dtype=np.float64) - world_from_cam.translation)
    z = float(p_cam[2])
    if z <= 0.0:
        raise BehindCameraError(f"point has non-positive camera depth z={z}")
    x = intr.fx * p_cam[0] / z + intr.cx
    y = intr.fy * p_cam[1] / z + intr.cy
    return (float(x), float(y)), z


def backproject(intr: Intrinsics, pose: Pose, px: tuple[float, float], z: float) -> np.ndarray:
    """Inverse of :func:`project`: pixel + camera z back to a world point."""
    x, y = float(px[0]), float(px[1])
    p_cam = np.array([(x - intr.cx) / intr.fx * z, (y - intr.cy) / intr.fy * z, z])
    return pose.rotation @ p_cam + pose.translation


def _pixel_center_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)  # each (H, W)


def camera_ray_directions(intr: Intrinsics) -> np.ndarray:
    """Unnormalized camera-frame directions through every pixel center, (H, W, 3)."""
    gx, gy = _pixel_center_grid(intr.width, intr.height)
    return np.stack([(gx - intr.cx) / intr.fx, (gy - intr.cy) / intr.fy, np.ones_like(gx)], axis=-1)


def warp_image(
    source: np.ndarray,
    depth_a: np.ndarray,
    a_to_b: Pose,
    intr: Intrinsics,
) -> tuple[np.ndarray, np.ndarray]:
    """Warp view B's image into view A using A's ray-depth map.

    Every pixel of view A is backprojected with its depth, rigidly moved into
    B's camera frame with ``a_to_b``, reprojected, and bilinearly sampled from
    ``source``. Returns ``(warped, valid)`` where ``valid`` is False wherever
    the depth is invalid, the point lands behind B, or the reprojection
    leaves the source image.
    """
    source = np.asarray(source)
    depth_a = np.asarray(depth_a, dtype=np.float64)
    h, w = depth_a.shape
    if source.shape[:2] != (h, w):
        raise ValueError(f"source resolution {source.shape[:2]} != depth resolution {(h, w)}")

    dirs = camera_ray_directions(intr)  # (H, W, 3), camera-A frame
    norms = np.linalg.norm(dirs, axis=-1)
    valid = np.isfinite(depth_a) & (depth_a > 0.0)

    # Backproject with distance along the unit ray, then move into B's frame.
    safe_depth = np.where(valid, depth_a, 1.0)
    pts_a = dirs * (safe_depth / norms)[..., None]
    pts_b = pts_a @ a_to_b.rotation.T + a_to_b.translation

    z = pts_b[..., 2]
    valid &= z > 0.0
    safe_z = np.where(valid, z, 1.0)
    qx = intr.fx * pts_b[..., 0] / safe_z + intr.cx
    qy = intr.fy * pts_b[..., 1] / safe_z + intr.cy

    # Bilinear sampling in index space (continuous coord minus half-pixel).
    # The epsilon keeps border pixels of an exact identity warp valid.
    eps = 1e-9
    ix = qx - 0.5
    iy = qy - 0.5
    valid &= (ix >= -eps) & (ix <= w - 1 + eps) & (iy >= -eps) & (iy <= h - 1 + eps)

    ix = np.clip(np.where(valid, ix, 0.0), 0.0, w - 1)
    iy = np.clip(np.where(valid, iy, 0.0), 0.0, h - 1)
    x0 = np.floor(ix).astype(np.int64)
    y0 = np.floor(iy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (ix - x0)[..., None]
    fy = (iy - y0)[..., None]

    src = source.astype(np.float64)
    if src.ndim == 2:
        src = src[..., None]
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    warped = top * (1 - fy) + bot * fy
    warped[~valid] = 0.0
    if source.ndim == 2:
        warped = warped[..., 0]
    return warped.astype(source.dtype, copy=False), valid
