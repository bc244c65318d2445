"""Reprojection-based uncertainty for rendered novel views.

For a novel view A: render color and depth, pick the nearest real input view
B by camera-center distance, warp B's image into A using A's rendered depth,
and score per-pixel disagreement as the channel-mean squared difference.
Pixels whose reprojection is invalid (low-confidence depth, out-of-frame, or
behind B's camera) take the ceiling value 1.0: "do not trust the rendering
here" is exactly the signal enhancer conditioning needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SceneDataset
from .errors import DataError
from .field import RadianceGrid
from .geometry import Intrinsics, Pose, relative_pose, warp_image
from .gsplat import GaussianCloud, splat_render
from .volren import INVALID_DEPTH, RenderConfig, RenderedView, render_view

UNCERTAINTY_CEILING = 1.0


@dataclass
class UncertaintyMap:
    values: np.ndarray  # (H, W) float32 in [0, ceiling]
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.values.shape != self.validity.shape:
            raise ValueError("uncertainty values and validity must share a shape")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("uncertainty values must be finite and non-negative")


def nearest_input_view(pose_a: Pose, input_poses: list[Pose]) -> int:
    """Index of the input pose with the closest camera center (ties -> lowest)."""
    if not input_poses:
        raise DataError("nearest_input_view needs at least one input pose")
    dists = [float(np.linalg.norm(p.center - pose_a.center)) for p in input_poses]
    return int(np.argmin(dists))


def uncertainty_map(rendered_a: np.ndarray, warped: np.ndarray, validity: np.ndarray) -> UncertaintyMap:
    """Channel-mean squared difference on valid pixels, ceiling elsewhere."""
    rendered_a = np.asarray(rendered_a, dtype=np.float64)
    warped = np.asarray(warped, dtype=np.float64)
    validity = np.asarray(validity, dtype=bool)
    if rendered_a.shape != warped.shape or rendered_a.shape[:2] != validity.shape:
        raise ValueError(
            f"resolution mismatch: rendered {rendered_a.shape}, warped {warped.shape}, mask {validity.shape}"
        )
    sq = np.mean((warped - rendered_a) ** 2, axis=-1)
    values = np.where(validity, sq, UNCERTAINTY_CEILING)
    return UncertaintyMap(values.astype(np.float32), validity)


def render_any(representation, intr: Intrinsics, pose: Pose, cfg: RenderConfig) -> RenderedView:
    """Render either representation to a RenderedView."""
    if isinstance(representation, RadianceGrid):
        return render_view(representation, intr, pose, cfg)
    if isinstance(representation, GaussianCloud):
        return splat_render(representation, intr, pose, background=cfg.background)
    raise TypeError(f"unsupported representation type {type(representation).__name__}")


def uncertainty_for_view(
    representation,
    dataset: SceneDataset,
    pose_a: Pose,
    cfg: RenderConfig = RenderConfig(),
) -> tuple[RenderedView, UncertaintyMap]:
    """Render novel view A and derive its reprojection uncertainty map."""
    inputs = [v for v in dataset.train_views() if v.provenance == "real"]
    if not inputs:
        raise DataError("dataset has no real input views to warp from")
    rendered = render_any(representation, dataset.intrinsics, pose_a, cfg)
    b_idx = nearest_input_view(pose_a, [v.pose for v in inputs])
    view_b = inputs[b_idx]
    depth = np.where(rendered.valid_depth, rendered.depth, INVALID_DEPTH)
    warped, valid = warp_image(view_b.image, depth, relative_pose(pose_a, view_b.pose), dataset.intrinsics)
    return rendered, uncertainty_map(rendered.rgb, warped, valid)
