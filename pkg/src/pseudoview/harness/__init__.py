"""Synthetic-scene oracle, dataset I/O, quality metrics, and the CLI."""

from .scene import Box, Sphere, SyntheticScene, generate_scene, render_ground_truth
from .metrics import psnr, ssim
from .dataset import RingGeometry, load_dataset, make_dataset, write_manifest

__all__ = [
    "Box",
    "Sphere",
    "SyntheticScene",
    "generate_scene",
    "render_ground_truth",
    "psnr",
    "ssim",
    "RingGeometry",
    "load_dataset",
    "make_dataset",
    "write_manifest",
]
