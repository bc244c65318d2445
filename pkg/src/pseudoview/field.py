"""Explicit voxel-grid radiance field with trilinear sampling.

The grid stores raw (pre-activation) values; querying interpolates the raw
grids trilinearly and then applies softplus to density and a logistic to
color, so activated values are valid for any raw content. Color is
view-independent: a viewing direction argument is accepted by ``sample`` but
has no effect in this grid variant.

Voxel centers sit at ``bbox_min + (i + 0.5) * cell`` per axis; interpolation
clamps to the edge voxels inside the half-cell border. Points outside the
bounding box contribute zero density and black color.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError

GRID_MAGIC = b"RGRD"
GRID_VERSION = 1

# softplus(raw) == 0.1 for the soft-fog initialization
_FOG_RAW_DENSITY = float(np.log(np.expm1(0.1)))


@dataclass
class RadianceGrid:
    """Bounded voxel grid of raw densities and colors.

    ``density_raw`` has shape (nx, ny, nz), ``color_raw`` (nx, ny, nz, 3);
    ``bbox`` is a (2, 3) float64 array of world-space min/max corners.
    Reads are pure; optimizer updates require exclusive access.
    """

    density_raw: torch.Tensor
    color_raw: torch.Tensor
    bbox: np.ndarray

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        nx, ny, nz = self.resolution
        if min(nx, ny, nz) < 2:
            raise ValueError(f"grid resolution must be >= 2 per axis, got {self.resolution}")
        if self.color_raw.shape != (nx, ny, nz, 3):
            raise ValueError(f"color_raw shape {tuple(self.color_raw.shape)} does not match density {self.resolution}")
        if not np.all(self.bbox[0] < self.bbox[1]):
            raise ValueError(f"bbox min must be < max per axis, got {self.bbox.tolist()}")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(self.density_raw.shape)

    @property
    def dtype(self) -> torch.dtype:
        return self.density_raw.dtype

    def to(self, dtype: torch.dtype) -> "RadianceGrid":
        return RadianceGrid(self.density_raw.to(dtype), self.color_raw.to(dtype), self.bbox.copy())

    def clone(self) -> "RadianceGrid":
        return RadianceGrid(self.density_raw.clone(), self.color_raw.clone(), self.bbox.copy())


def init_grid(resolution: tuple[int, int, int], bbox, seed: int) -> RadianceGrid:
    """Fresh grid: activated density ~0.1 everywhere (soft fog), mid-gray color."""
    nx, ny, nz = resolution
    rng = np.random.default_rng([int(seed), 0x6F67])
    density = _FOG_RAW_DENSITY + 0.02 * rng.standard_normal((nx, ny, nz))
    color = np.zeros((nx, ny, nz, 3))
    return RadianceGrid(
        torch.from_numpy(density.astype(np.float32)),
        torch.from_numpy(color.astype(np.float32)),
        np.asarray(bbox, dtype=np.float64).reshape(2, 3),
    )


def _interp_raw(grid: RadianceGrid, pts: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Trilinear interpolation of both raw grids at ``pts`` (N, 3).

    Returns (density_raw, color_raw, inside_mask). Values for outside points
    are edge-clamped garbage; callers must apply the mask.
    """
    dtype = grid.density_raw.dtype
    lo = torch.as_tensor(grid.bbox[0], dtype=dtype)
    hi = torch.as_tensor(grid.bbox[1], dtype=dtype)
    res = torch.tensor(grid.resolution, dtype=dtype)

    inside = ((pts >= lo) & (pts <= hi)).all(dim=-1)

    cell = (hi - lo) / res
    u = (pts - lo) / cell - 0.5
    u = torch.clamp(u, torch.zeros(3, dtype=dtype), res - 1)
    i0 = torch.minimum(torch.floor(u), res - 2).long()
    f = (u - i0.to(dtype)).unsqueeze(-1)  # (N, 3, 1)

    nx, ny, nz = grid.resolution
    dens_flat = grid.density_raw.reshape(-1)
    col_flat = grid.color_raw.reshape(-1, 3)

    def corner(dx: int, dy: int, dz: int) -> torch.Tensor:
        idx = ((i0[:, 0] + dx) * ny + (i0[:, 1] + dy)) * nz + (i0[:, 2] + dz)
        return idx

    wx = torch.cat([1 - f[:, 0], f[:, 0]], dim=-1)  # (N, 2)
    wy = torch.cat([1 - f[:, 1], f[:, 1]], dim=-1)
    wz = torch.cat([1 - f[:, 2], f[:, 2]], dim=-1)

    dens = torch.zeros(pts.shape[0], dtype=dtype)
    col = torch.zeros(pts.shape[0], 3, dtype=dtype)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = wx[:, dx] * wy[:, dy] * wz[:, dz]
                idx = corner(dx, dy, dz)
                dens = dens + w * dens_flat[idx]
                col = col + w.unsqueeze(-1) * col_flat[idx]
    return dens, col, inside


def sample(grid: RadianceGrid, points, direction=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Query (sigma, color) at world points of shape (..., 3).

    ``direction`` is accepted for signature compatibility with directional
    fields and ignored: this variant is view-independent.
    """
    del direction
    pts = torch.as_tensor(points, dtype=grid.density_raw.dtype)
    flat = pts.reshape(-1, 3)
    dens_raw, col_raw, inside = _interp_raw(grid, flat)
    sigma = F.softplus(dens_raw) * inside.to(dens_raw.dtype)
    color = torch.sigmoid(col_raw) * inside.to(col_raw.dtype).unsqueeze(-1)
    return sigma.reshape(pts.shape[:-1]), color.reshape(pts.shape[:-1] + (3,))


def save_grid(path, grid: RadianceGrid) -> None:
    """Write the binary grid checkpoint (see format notes in load_grid)."""
    nx, ny, nz = grid.resolution
    header = GRID_MAGIC + struct.pack("<IIII", GRID_VERSION, nx, ny, nz)
    header += struct.pack("<6d", *grid.bbox[0], *grid.bbox[1])
    dens = grid.density_raw.detach().cpu().numpy().astype("<f4")
    col = grid.color_raw.detach().cpu().numpy().astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        # x-fastest voxel order; colors as RGB triples per voxel
        fh.write(dens.transpose(2, 1, 0).tobytes())
        fh.write(col.transpose(2, 1, 0, 3).tobytes())


def load_grid(path) -> RadianceGrid:
    """Read a checkpoint written by :func:`save_grid`.

    Layout: magic ``RGRD``, u32 version, u32 nx/ny/nz, bbox as 6 little-endian
    float64 (min xyz then max xyz), then density and color as little-endian
    float32 in x-fastest voxel order.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GRID_MAGIC:
        raise DataError(f"{path}: not a radiance grid checkpoint (bad magic)")
    version, nx, ny, nz = struct.unpack_from("<IIII", blob, 4)
    if version != GRID_VERSION:
        raise DataError(f"{path}: unsupported grid checkpoint version {version}")
    bbox = np.array(struct.unpack_from("<6d", blob, 20)).reshape(2, 3)
    off = 20 + 48
    n = nx * ny * nz
    if len(blob) < off + 16 * n:
        raise DataError(f"{path}: truncated grid checkpoint")
    dens = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
    col = np.frombuffer(blob, dtype="<f4", count=3 * n, offset=off + 4 * n)
    dens = dens.reshape(nz, ny, nx).transpose(2, 1, 0)
    col = col.reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3)
    return RadianceGrid(
        torch.from_numpy(np.ascontiguousarray(dens)),
        torch.from_numpy(np.ascontiguousarray(col)),
        bbox,
    )
