"""In-memory dataset containers shared by training, consistency, and the loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, Pose


@dataclass
class View:
    """One observation: an image bound to a camera.

    ``provenance`` is "real" for captured inputs and "pseudo" for
    enhancer-generated observations; ``depth`` (ray-distance map, invalid
    entries <= 0) is optional and only populated for synthetic ground truth.
    """

    view_id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    pose: Pose
    split: str = "train"
    provenance: str = "real"
    depth: np.ndarray | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"view {self.view_id}: image must be (H, W, 3), got {self.image.shape}")
        if self.split not in ("train", "test"):
            raise ValueError(f"view {self.view_id}: unknown split {self.split!r}")
        if self.provenance not in ("real", "pseudo"):
            raise ValueError(f"view {self.view_id}: unknown provenance {self.provenance!r}")


@dataclass
class SceneDataset:
    """Calibrated views sharing one set of intrinsics."""

    intrinsics: Intrinsics
    views: list[View] = field(default_factory=list)

    def train_views(self) -> list[View]:
        return [v for v in self.views if v.split == "train"]

    def test_views(self) -> list[View]:
        return [v for v in self.views if v.split == "test"]

    def real_views(self) -> list[View]:
        return [v for v in self.views if v.provenance == "real"]

    def poses(self, views: list[View] | None = None) -> list[Pose]:
        return [v.pose for v in (self.views if views is None else views)]
