"""Differentiable volume rendering of color and depth along rays.

Per-ray quadrature follows the standard emission-absorption model: with
samples at distances t_k, segment lengths delta_k, densities sigma_k and
colors c_k,

    T_k   = exp(-sum_{k'<k} sigma_k' * delta_k')   (transmittance)
    alpha_k = 1 - exp(-sigma_k * delta_k)
    color = sum_k T_k * alpha_k * c_k + leftover * background
    depth = sum_k T_k * alpha_k * t_k

Depth is the weight-composited distance along the unit ray; rays whose
accumulated opacity stays below ``LOW_CONFIDENCE_ACC`` carry no usable depth
and consumers must treat those pixels as invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .field import RadianceGrid, sample as sample_field
from .geometry import Intrinsics, Pose

LOW_CONFIDENCE_ACC = 0.5
INVALID_DEPTH = -1.0


@dataclass
class RaySamples:
    """Ordered samples along one or more rays (leading dims broadcast)."""

    t: torch.Tensor  # (..., K) strictly increasing distances
    delta: torch.Tensor  # (..., K) positive segment lengths
    sigma: torch.Tensor  # (..., K) non-negative densities
    color: torch.Tensor  # (..., K, 3)

    def __post_init__(self):
        self.t = torch.as_tensor(self.t)
        dtype = self.t.dtype if self.t.is_floating_point() else torch.float32
        self.t = self.t.to(dtype)
        self.delta = torch.as_tensor(self.delta, dtype=dtype)
        self.sigma = torch.as_tensor(self.sigma, dtype=dtype)
        self.color = torch.as_tensor(self.color, dtype=dtype)
        if not torch.all(self.t[..., 1:] > self.t[..., :-1]):
            raise ValueError("sample distances must be strictly increasing")
        if not torch.all(self.delta > 0):
            raise ValueError("segment lengths must be positive")
        if not torch.all(self.sigma >= 0):
            raise ValueError("densities must be non-negative")
        if self.color.shape != self.sigma.shape + (3,):
            raise ValueError(f"color shape {tuple(self.color.shape)} does not match sigma {tuple(self.sigma.shape)}")


@dataclass
class RenderedView:
    """One rendered camera: RGB in [0,1], ray-depth map, accumulated opacity."""

    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    acc: np.ndarray  # (H, W)

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.acc = np.asarray(self.acc, dtype=np.float32)
        if not (np.all(np.isfinite(self.rgb)) and np.all(np.isfinite(self.depth)) and np.all(np.isfinite(self.acc))):
            raise ValueError("rendered view contains non-finite values")
        if np.any(self.acc < -1e-6) or np.any(self.acc > 1.0 + 1e-6):
            raise ValueError("accumulated opacity out of [0, 1]")

    @property
    def valid_depth(self) -> np.ndarray:
        """Pixels whose composited depth is trustworthy."""
        return self.acc >= LOW_CONFIDENCE_ACC

    def depth_with_validity(self) -> np.ndarray:
        """Depth map with invalid pixels encoded as INVALID_DEPTH."""
        return np.where(self.valid_depth, self.depth, INVALID_DEPTH).astype(np.float32)


@dataclass(frozen=True)
class RenderConfig:
    """Ray sampling setup for grid rendering."""

    near: float = 0.5
    far: float = 6.0
    samples_per_ray: int = 64
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    chunk: int = dc_field(default=8192, repr=False)

    def __post_init__(self):
        if not self.near < self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")


def _exclusive_optical_depth(samples: RaySamples) -> tuple[torch.Tensor, torch.Tensor]:
    sd = samples.sigma * samples.delta
    csum = torch.cumsum(sd, dim=-1)
    return csum - sd, csum


def transmittance(samples: RaySamples) -> torch.Tensor:
    """Per-sample transmittance T(t_k); starts at 1 and never increases."""
    excl, _ = _exclusive_optical_depth(samples)
    return torch.exp(-excl)


def composite_color(samples: RaySamples, background) -> torch.Tensor:
    """Front-to-back composited color with the leftover transmittance
    falling through to ``background``."""
    excl, total = _exclusive_optical_depth(samples)
    trans = torch.exp(-excl)
    alpha = 1.0 - torch.exp(-samples.sigma * samples.delta)
    weights = trans * alpha
    bg = torch.as_tensor(background, dtype=samples.t.dtype)
    return (weights.unsqueeze(-1) * samples.color).sum(dim=-2) + torch.exp(-total[..., -1:]) * bg


def composite_depth(samples: RaySamples) -> tuple[torch.Tensor, torch.Tensor]:
    """Weight-composited ray distance plus accumulated opacity.

    Depth values where acc < LOW_CONFIDENCE_ACC are meaningless; callers
    decide whether to mask them (see RenderedView.valid_depth).
    """
    excl, _ = _exclusive_optical_depth(samples)
    trans = torch.exp(-excl)
    alpha = 1.0 - torch.exp(-samples.sigma * samples.delta)
    weights = trans * alpha
    return (weights * samples.t).sum(dim=-1), weights.sum(dim=-1)


def pixel_rays(intr: Intrinsics, pose: Pose, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Origins and unit world directions for continuous pixel coords (B, 2)."""
    dtype = pixels.dtype
    d_cam = torch.stack(
        [
            (pixels[:, 0] - intr.cx) / intr.fx,
            (pixels[:, 1] - intr.cy) / intr.fy,
            torch.ones(pixels.shape[0], dtype=dtype),
        ],
        dim=-1,
    )
    rot = torch.as_tensor(pose.rotation, dtype=dtype)
    d_world = d_cam @ rot.T
    d_world = d_world / d_world.norm(dim=-1, keepdim=True)
    origins = torch.as_tensor(pose.center, dtype=dtype).expand_as(d_world)
    return origins, d_world


def stratified_samples(
    grid: RadianceGrid,
    origins: torch.Tensor,
    dirs: torch.Tensor,
    cfg: RenderConfig,
    rng: np.random.Generator,
) -> RaySamples:
    """Jittered uniform bins on [near, far] evaluated against the grid.

    Jitter stays off the bin edges so segment lengths remain strictly
    positive after rounding to the grid dtype.
    """
    dtype = grid.dtype
    n_rays = origins.shape[0]
    k = cfg.samples_per_ray
    jitter = 0.001 + 0.998 * rng.random((n_rays, k))
    offs = (torch.arange(k, dtype=dtype) + torch.as_tensor(jitter, dtype=dtype)) / k
    t = cfg.near + (cfg.far - cfg.near) * offs
    delta = torch.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = cfg.far - t[:, -1]
    pts = origins.unsqueeze(1) + dirs.unsqueeze(1) * t.unsqueeze(-1)
    sigma, color = sample_field(grid, pts)
    return RaySamples(t=t, delta=delta, sigma=sigma, color=color)


def render_pixels(
    grid: RadianceGrid,
    intr: Intrinsics,
    pose: Pose,
    pixels: torch.Tensor,
    cfg: RenderConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable (rgb, depth, acc) for a batch of pixel centers."""
    origins, dirs = pixel_rays(intr, pose, pixels.to(grid.dtype))
    samples = stratified_samples(grid, origins, dirs, cfg, rng)
    rgb = composite_color(samples, cfg.background)
    depth, acc = composite_depth(samples)
    return rgb, depth, acc


def render_view(grid: RadianceGrid, intr: Intrinsics, pose: Pose, cfg: RenderConfig) -> RenderedView:
    """Render a full image; deterministic for a fixed cfg.seed."""
    h, w = intr.height, intr.width
    gx, gy = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pixels = torch.as_tensor(np.stack([gx.ravel(), gy.ravel()], axis=-1), dtype=grid.dtype)
    rng = np.random.default_rng([int(cfg.seed), 0x7672])

    rgb_parts, depth_parts, acc_parts = [], [], []
    with torch.no_grad():
        for start in range(0, pixels.shape[0], cfg.chunk):
            chunk = pixels[start : start + cfg.chunk]
            rgb, depth, acc = render_pixels(grid, intr, pose, chunk, cfg, rng)
            rgb_parts.append(rgb.numpy())
            depth_parts.append(depth.numpy())
            acc_parts.append(acc.numpy())
    rgb = np.concatenate(rgb_parts).reshape(h, w, 3)
    depth = np.concatenate(depth_parts).reshape(h, w)
    acc = np.concatenate(acc_parts).reshape(h, w)
    return RenderedView(np.clip(rgb, 0.0, 1.0), depth, np.clip(acc, 0.0, 1.0))
