"""Procedural test scenes with an exact ray-traced reference renderer.

Scenes are flat-shaded Lambertian: every surface point emits its object's
albedo regardless of direction, which makes the analytic renders directly
comparable with what a converged radiance field or gaussian cloud should
reproduce. Depth is the first-hit distance along the unit ray; pixels that
hit nothing get the background color and depth -1 (invalid).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..geometry import Intrinsics, Pose, camera_ray_directions

_HIT_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "albedo", np.asarray(self.albedo, dtype=np.float64).reshape(3))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_size: np.ndarray
    albedo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "half_size", np.asarray(self.half_size, dtype=np.float64).reshape(3))
        object.__setattr__(self, "albedo", np.asarray(self.albedo, dtype=np.float64).reshape(3))
        if np.any(self.half_size <= 0):
            raise ValueError("box half sizes must be positive")


@dataclass
class SyntheticScene:
    spheres: list[Sphere] = field(default_factory=list)
    boxes: list[Box] = field(default_factory=list)
    bbox: np.ndarray = field(default_factory=lambda: np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]))
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    @property
    def object_count(self) -> int:
        return len(self.spheres) + len(self.boxes)

    @property
    def center(self) -> np.ndarray:
        return self.bbox.mean(axis=0)


def generate_scene(seed: int, object_count: int = 6) -> SyntheticScene:
    """Deterministic procedural scene of colored spheres and boxes."""
    if object_count < 1:
        raise ValueError("object_count must be >= 1")
    rng = np.random.default_rng([int(seed), 0x7363])
    scene = SyntheticScene()
    centers: list[np.ndarray] = []
    while len(centers) < object_count:
        c = rng.uniform(-0.55, 0.55, size=3)
        # keep objects apart so none is swallowed by another
        if centers and min(np.linalg.norm(c - p) for p in centers) < 0.3:
            continue
        albedo = rng.uniform(0.1, 0.95, size=3)
        if rng.random() < 0.5:
            scene.spheres.append(Sphere(c, float(rng.uniform(0.12, 0.3)), albedo))
        else:
            scene.boxes.append(Box(c, rng.uniform(0.1, 0.28, size=3), albedo))
        centers.append(c)
    return scene


def scene_to_json(scene: SyntheticScene) -> str:
    doc = {
        "bbox": scene.bbox.tolist(),
        "background": scene.background.tolist(),
        "spheres": [
            {"center": s.center.tolist(), "radius": s.radius, "albedo": s.albedo.tolist()} for s in scene.spheres
        ],
        "boxes": [
            {"center": b.center.tolist(), "half_size": b.half_size.tolist(), "albedo": b.albedo.tolist()}
            for b in scene.boxes
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def scene_from_json(text: str) -> SyntheticScene:
    try:
        doc = json.loads(text)
        scene = SyntheticScene(bbox=np.array(doc["bbox"]), background=np.array(doc["background"]))
        scene.spheres = [Sphere(s["center"], s["radius"], s["albedo"]) for s in doc["spheres"]]
        scene.boxes = [Box(b["center"], b["half_size"], b["albedo"]) for b in doc["boxes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed scene description: {exc}") from exc
    return scene


def save_scene(path, scene: SyntheticScene) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scene_to_json(scene))


def load_scene(path) -> SyntheticScene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_json(fh.read())


def _intersect_spheres(scene, origin, dirs, t_best, albedo):
    for s in scene.spheres:
        oc = origin - s.center
        b = dirs @ oc  # (H, W)
        c0 = float(oc @ oc - s.radius**2)
        disc = b * b - c0
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > _HIT_EPS, t0, t1)
        closer = hit & (t > _HIT_EPS) & (t < t_best)
        t_best = np.where(closer, t, t_best)
        albedo = np.where(closer[..., None], s.albedo, albedo)
    return t_best, albedo


def _intersect_boxes(scene, origin, dirs, t_best, albedo):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    for b in scene.boxes:
        lo = b.center - b.half_size
        hi = b.center + b.half_size
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
        # rays parallel to a slab: +-inf bounds sort out correctly below
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tmax >= tmin) & (tmax > _HIT_EPS)
        t = np.where(tmin > _HIT_EPS, tmin, tmax)
        closer = hit & (t > _HIT_EPS) & (t < t_best)
        t_best = np.where(closer, t, t_best)
        albedo = np.where(closer[..., None], b.albedo, albedo)
    return t_best, albedo


def render_ground_truth(scene: SyntheticScene, intr: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Exact reference rendering: (rgb (H,W,3), ray-distance depth (H,W))."""
    dirs_cam = camera_ray_directions(intr)
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origin = pose.center

    t_best = np.full(dirs.shape[:2], np.inf)
    albedo = np.broadcast_to(scene.background, dirs.shape).copy()
    t_best, albedo = _intersect_spheres(scene, origin, dirs, t_best, albedo)
    t_best, albedo = _intersect_boxes(scene, origin, dirs, t_best, albedo)

    depth = np.where(np.isfinite(t_best), t_best, -1.0)
    return albedo.astype(np.float32), depth.astype(np.float32)
