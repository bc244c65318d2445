"""Sparse-view 3D reconstruction with pseudo-observation densification.

Two differentiable scene representations (an explicit voxel radiance grid
and a 3D gaussian cloud) train against photometric loss; a densification
loop alternates training with enhancer-generated pseudo-observations at
sampled novel views, guided by depth-reprojection uncertainty maps. The
enhancer sits behind a pluggable local/remote interface so the whole loop
runs and is testable without any generative model.
"""

from .data import SceneDataset, View
from .field import RadianceGrid, init_grid, load_grid, sample, save_grid
from .geometry import Intrinsics, Pose, Ray, look_at, project, ray_for_pixel, warp_image
from .gsplat import Gaussian3D, GaussianCloud, init_cloud, load_cloud, save_cloud, splat_render
from .optim import RepresentationSpec, TrainConfig, init_representation, photometric_loss, train
from .pipeline import LoopConfig, ObservationPool, run_baseline, run_deceptive_loop
from .volren import RenderConfig, RenderedView, render_view

__version__ = "0.1.0"

__all__ = [
    "SceneDataset",
    "View",
    "RadianceGrid",
    "init_grid",
    "load_grid",
    "sample",
    "save_grid",
    "Intrinsics",
    "Pose",
    "Ray",
    "look_at",
    "project",
    "ray_for_pixel",
    "warp_image",
    "Gaussian3D",
    "GaussianCloud",
    "init_cloud",
    "load_cloud",
    "save_cloud",
    "splat_render",
    "RepresentationSpec",
    "TrainConfig",
    "init_representation",
    "photometric_loss",
    "train",
    "LoopConfig",
    "ObservationPool",
    "run_baseline",
    "run_deceptive_loop",
    "RenderConfig",
    "RenderedView",
    "render_view",
    "__version__",
]
