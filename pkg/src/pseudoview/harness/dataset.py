"""Dataset generation and manifest I/O.

A dataset directory holds 8-bit PNG images, PFM ray-depth maps, the source
scene description, and a ``manifest.json`` with the shared intrinsics and
one frame record per view (camera-to-world transform as a row-major 4x4,
split tag, provenance). Manifests are written canonically (sorted keys,
two-space indent, trailing newline) so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..data import SceneDataset, View
from ..errors import DataError
from ..geometry import Intrinsics, Pose, look_at
from ..imgio import read_pfm, read_png, write_pfm, write_png
from .scene import SyntheticScene, render_ground_truth, save_scene

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class RingGeometry:
    """Camera ring around the scene center."""

    radius: float = 2.6
    height: float = 1.1
    span_degrees: float = 360.0
    phase_degrees: float = 0.0
    angle_jitter: float = 0.15  # fraction of the angular spacing

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ring radius must be positive")


def ring_poses(center: np.ndarray, ring: RingGeometry, count: int, seed: int) -> list[Pose]:
    center = np.asarray(center, dtype=np.float64)
    rng = np.random.default_rng([int(seed), 0x72696E])
    spacing = np.deg2rad(ring.span_degrees) / count
    poses = []
    for i in range(count):
        theta = np.deg2rad(ring.phase_degrees) + spacing * i
        theta += ring.angle_jitter * spacing * rng.uniform(-1.0, 1.0)
        eye = center + np.array([ring.radius * np.cos(theta), ring.radius * np.sin(theta), ring.height])
        poses.append(look_at(eye, center))
    return poses


def make_dataset(
    scene: SyntheticScene,
    intr: Intrinsics,
    view_count: int,
    ring: RingGeometry,
    seed: int,
    out_dir,
) -> SceneDataset:
    """Render a ring of ground-truth views and write the dataset directory.

    Every 4th view (indices 0, 4, 8, ...) is held out as the test split.
    """
    if view_count < 2:
        raise ValueError("view_count must be >= 2")
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "depth"), exist_ok=True)

    poses = ring_poses(scene.center, ring, view_count, seed)
    views = []
    for i, pose in enumerate(poses):
        rgb, depth = render_ground_truth(scene, intr, pose)
        vid = f"view_{i:03d}"
        try:
            write_png(os.path.join(out_dir, "images", f"{vid}.png"), rgb)
            write_pfm(os.path.join(out_dir, "depth", f"{vid}.pfm"), depth)
        except OSError as exc:
            raise DataError(f"failed writing view files under {out_dir}: {exc}") from exc
        views.append(
            View(
                view_id=vid,
                image=rgb,
                pose=pose,
                split="test" if i % 4 == 0 else "train",
                provenance="real",
                depth=depth,
            )
        )
    dataset = SceneDataset(intrinsics=intr, views=views)
    save_scene(os.path.join(out_dir, "scene.json"), scene)
    write_manifest(os.path.join(out_dir, MANIFEST_NAME), dataset)
    return dataset


def _manifest_doc(dataset: SceneDataset) -> dict:
    intr = dataset.intrinsics
    return {
        "intrinsics": {
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        },
        "frames": [
            {
                "view_id": v.view_id,
                "image": f"images/{v.view_id}.png",
                "depth": f"depth/{v.view_id}.pfm" if v.depth is not None else None,
                "transform": [float(x) for x in v.pose.matrix().reshape(16)],
                "split": v.split,
                "provenance": v.provenance,
            }
            for v in dataset.views
        ],
    }


def write_manifest(path, dataset: SceneDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_manifest_doc(dataset), indent=2, sort_keys=True) + "\n")


def load_dataset(root) -> SceneDataset:
    """Read a dataset directory back; validates that referenced files exist."""
    manifest_path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise DataError(f"no {MANIFEST_NAME} under {root}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}: invalid JSON: {exc}") from exc
    try:
        ii = doc["intrinsics"]
        intr = Intrinsics(ii["fx"], ii["fy"], ii["cx"], ii["cy"], ii["width"], ii["height"])
        views = []
        for frame in doc["frames"]:
            img_path = os.path.join(root, frame["image"])
            if not os.path.exists(img_path):
                raise DataError(f"manifest references missing image {img_path}")
            image = read_png(img_path)
            depth = None
            if frame.get("depth"):
                depth_path = os.path.join(root, frame["depth"])
                if not os.path.exists(depth_path):
                    raise DataError(f"manifest references missing depth map {depth_path}")
                depth = read_pfm(depth_path)
            pose = Pose.from_matrix(np.array(frame["transform"], dtype=np.float64).reshape(4, 4))
            views.append(
                View(
                    view_id=frame["view_id"],
                    image=image,
                    pose=pose,
                    split=frame["split"],
                    provenance=frame["provenance"],
                    depth=depth,
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{manifest_path}: malformed manifest: {exc}") from exc
    return SceneDataset(intrinsics=intr, views=views)
