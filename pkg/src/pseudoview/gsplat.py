"""3D Gaussian cloud representation and ordered alpha-blended splatting.

Each gaussian carries a world mean, per-axis log scales, a unit quaternion
(w, x, y, z), an opacity logit and a view-independent RGB color (degree-0
spherical harmonics). Rendering projects every gaussian to a 2D gaussian via
a local affine (EWA-style) approximation with an isotropic 0.3 px^2 dilation
floor, sorts globally by camera depth (ties broken by original index), and
alpha-blends front to back:

    alpha_i = logistic(o_i) * exp(-0.5 * d^T cov2d^-1 d), clamped to 0.999
    color   = sum_i c_i alpha_i prod_{j<i} (1 - alpha_j) + leftover * bg

Contributions with alpha below 1/255 are skipped. Depth is composited with
the same weights and converted to distance along the pixel ray so splat depth
maps share the volren convention.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DataError
from .geometry import Intrinsics, Pose
from .volren import RenderedView

CLOUD_MAGIC = b"GCLD"
CLOUD_VERSION = 1

ALPHA_CLAMP = 0.999
ALPHA_SKIP = 1.0 / 255.0
COV2D_DILATION = 0.3
# near-plane cull: the EWA jacobian grows as 1/z^2 and overflows float32 for
# centers within ~1e-6 of the camera plane; 1e-3 world units is far below any
# meaningful depth at desk scale
MIN_DEPTH = 1e-3


@dataclass
class Gaussian3D:
    mean: np.ndarray  # (3,) world units
    log_scale: np.ndarray  # (3,) per-axis log standard deviation
    rotation_q: np.ndarray  # (4,) unit quaternion, (w, x, y, z)
    opacity_logit: float
    color: np.ndarray  # (3,) RGB in [0, 1]

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation_q, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if n < 1e-8:
            raise ValueError("degenerate quaternion")
        self.rotation_q = q / n
        self.opacity_logit = float(self.opacity_logit)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        if np.any(self.color < 0.0) or np.any(self.color > 1.0):
            raise ValueError(f"color {self.color} outside [0, 1]")

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation_q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def covariance(self) -> np.ndarray:
        r = self.rotation_matrix()
        return r @ np.diag(np.exp(2.0 * self.log_scale)) @ r.T


@dataclass
class GaussianCloud:
    gaussians: list[Gaussian3D]

    def __len__(self) -> int:
        return len(self.gaussians)

    def pack(self, dtype: torch.dtype = torch.float32) -> dict[str, torch.Tensor]:
        """Struct-of-arrays tensors for the renderer/optimizer."""
        if not self.gaussians:
            raise ValueError("cannot pack an empty gaussian cloud")
        means = np.stack([g.mean for g in self.gaussians])
        log_scales = np.stack([g.log_scale for g in self.gaussians])
        quats = np.stack([g.rotation_q for g in self.gaussians])
        opacities = np.array([g.opacity_logit for g in self.gaussians])
        colors = np.stack([g.color for g in self.gaussians])
        to = lambda a: torch.as_tensor(a, dtype=dtype)
        return {
            "means": to(means),
            "log_scales": to(log_scales),
            "rotations": to(quats),
            "opacities": to(opacities),
            "colors_raw": to(_color_to_raw(colors)),
        }

    @staticmethod
    def from_tensors(params: dict[str, torch.Tensor]) -> "GaussianCloud":
        means = params["means"].detach().cpu().numpy()
        log_scales = params["log_scales"].detach().cpu().numpy()
        quats = params["rotations"].detach().cpu().numpy()
        opacities = params["opacities"].detach().cpu().numpy()
        colors = torch.sigmoid(params["colors_raw"]).detach().cpu().numpy()
        return GaussianCloud(
            [
                Gaussian3D(means[i], log_scales[i], quats[i], float(opacities[i]), np.clip(colors[i], 0.0, 1.0))
                for i in range(means.shape[0])
            ]
        )


def _color_to_raw(colors: np.ndarray) -> np.ndarray:
    c = np.clip(colors, 1e-4, 1.0 - 1e-4)
    return np.log(c / (1.0 - c))


def init_cloud(count: int, bbox, seed: int) -> GaussianCloud:
    """Random cloud: means uniform in bbox, mild isotropic scales, low opacity."""
    if count < 1:
        raise ValueError("cloud needs at least one gaussian")
    bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
    rng = np.random.default_rng([int(seed), 0x6763])
    means = bbox[0] + rng.random((count, 3)) * (bbox[1] - bbox[0])
    base_scale = 0.05 * float(np.mean(bbox[1] - bbox[0]))
    log_scales = np.log(base_scale) + 0.2 * rng.standard_normal((count, 3))
    quats = rng.standard_normal((count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacity = np.log(0.1 / 0.9)  # logistic^-1(0.1)
    colors = np.clip(0.5 + 0.05 * rng.standard_normal((count, 3)), 0.0, 1.0)
    return GaussianCloud(
        [Gaussian3D(means[i], log_scales[i], quats[i], opacity, colors[i]) for i in range(count)]
    )


def eval_density(g: Gaussian3D, x) -> np.ndarray | float:
    """Normalized 3D gaussian density at world point(s) ``x``."""
    cov = g.covariance()
    inv = np.linalg.inv(cov)
    det = np.linalg.det(cov)
    d = np.asarray(x, dtype=np.float64) - g.mean
    maha = np.einsum("...i,ij,...j->...", d, inv, d)
    val = np.exp(-0.5 * maha) / ((2.0 * np.pi) ** 1.5 * np.sqrt(det))
    return float(val) if np.isscalar(maha) or maha.ndim == 0 else val


def _projection_jacobian(intr: Intrinsics, p_cam: np.ndarray) -> np.ndarray:
    x, y, z = p_cam
    return np.array([[intr.fx / z, 0.0, -intr.fx * x / z**2], [0.0, intr.fy / z, -intr.fy * y / z**2]])


def project_gaussian(g: Gaussian3D, intr: Intrinsics, world_from_cam: Pose):
    """EWA projection to (mean2d, 2x2 cov2d, camera depth).

    Returns None when the gaussian center is behind the camera (culled).
    """
    w_rot = world_from_cam.rotation.T
    p_cam = w_rot @ (g.mean - world_from_cam.translation)
    z = float(p_cam[2])
    if z <= MIN_DEPTH:
        return None
    mean2d = np.array([intr.fx * p_cam[0] / z + intr.cx, intr.fy * p_cam[1] / z + intr.cy])
    jac = _projection_jacobian(intr, p_cam)
    jw = jac @ w_rot
    cov2d = jw @ g.covariance() @ jw.T + COV2D_DILATION * np.eye(2)
    return mean2d, cov2d, z


def quats_to_rotmats(quats: torch.Tensor) -> torch.Tensor:
    """Batched unit-quaternion (w, x, y, z) to rotation matrices: (N, 3, 3)."""
    q = quats / quats.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    rows = [
        torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1),
        torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1),
        torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def render_pixels_from_tensors(
    params: dict[str, torch.Tensor],
    intr: Intrinsics,
    pose: Pose,
    pixels: torch.Tensor,
    background,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable splat rendering of a pixel batch.

    ``pixels`` holds continuous pixel-center coordinates (B, 2). Returns
    (rgb (B, 3), ray depth (B,), acc (B,)).
    """
    dtype = params["means"].dtype
    n_pix = pixels.shape[0]
    bg = torch.as_tensor(background, dtype=dtype)

    w_rot = torch.as_tensor(pose.rotation.T, dtype=dtype)
    t = torch.as_tensor(pose.translation, dtype=dtype)
    p_cam = (params["means"] - t) @ w_rot.T
    vis = p_cam[:, 2] > MIN_DEPTH
    ray_norm = torch.sqrt(
        ((pixels[:, 0] - intr.cx) / intr.fx) ** 2 + ((pixels[:, 1] - intr.cy) / intr.fy) ** 2 + 1.0
    )
    if not bool(vis.any()):
        zeros = torch.zeros(n_pix, dtype=dtype)
        return bg.expand(n_pix, 3).clone(), zeros, zeros.clone()

    p_cam = p_cam[vis]
    z = p_cam[:, 2]
    mean2d = torch.stack(
        [intr.fx * p_cam[:, 0] / z + intr.cx, intr.fy * p_cam[:, 1] / z + intr.cy], dim=-1
    )

    rot = quats_to_rotmats(params["rotations"][vis])
    scales = torch.exp(params["log_scales"][vis])
    m = rot * scales.unsqueeze(-2)  # R @ diag(s)
    cov3d = m @ m.transpose(-1, -2)

    zero = torch.zeros_like(z)
    jac = torch.stack(
        [
            torch.stack([intr.fx / z, zero, -intr.fx * p_cam[:, 0] / z**2], dim=-1),
            torch.stack([zero, intr.fy / z, -intr.fy * p_cam[:, 1] / z**2], dim=-1),
        ],
        dim=-2,
    )  # (N, 2, 3)
    jw = jac @ w_rot
    cov2d = jw @ cov3d @ jw.transpose(-1, -2)
    cov2d = cov2d + COV2D_DILATION * torch.eye(2, dtype=dtype)

    # global front-to-back order; stable sort keeps original index on ties
    order = torch.argsort(z, stable=True)
    z = z[order]
    mean2d = mean2d[order]
    cov2d = cov2d[order]
    opac = torch.sigmoid(params["opacities"][vis][order])
    colors = torch.sigmoid(params["colors_raw"][vis][order])

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    inv_a = (c / det).unsqueeze(-1)
    inv_b = (-b / det).unsqueeze(-1)
    inv_c = (a / det).unsqueeze(-1)

    dx = pixels[:, 0].unsqueeze(0) - mean2d[:, 0].unsqueeze(-1)  # (N, B)
    dy = pixels[:, 1].unsqueeze(0) - mean2d[:, 1].unsqueeze(-1)
    maha = inv_a * dx * dx + 2.0 * inv_b * dx * dy + inv_c * dy * dy
    alpha = opac.unsqueeze(-1) * torch.exp(-0.5 * maha)
    alpha = torch.clamp(alpha, max=ALPHA_CLAMP)
    alpha = torch.where(alpha < ALPHA_SKIP, torch.zeros_like(alpha), alpha)

    one_minus = 1.0 - alpha
    trans = torch.cumprod(one_minus, dim=0)
    leftover = trans[-1]
    trans = torch.cat([torch.ones(1, n_pix, dtype=dtype), trans[:-1]], dim=0)
    weights = alpha * trans  # (N, B)

    rgb = weights.unsqueeze(-1).mul(colors.unsqueeze(1)).sum(dim=0) + leftover.unsqueeze(-1) * bg
    acc = weights.sum(dim=0)
    depth = (weights * z.unsqueeze(-1)).sum(dim=0) * ray_norm
    return rgb, depth, acc


def splat_render(
    cloud: GaussianCloud,
    intr: Intrinsics,
    pose: Pose,
    background=(0.0, 0.0, 0.0),
    dtype: torch.dtype = torch.float32,
    chunk: int = 4096,
) -> RenderedView:
    """Render a full view from a gaussian cloud."""
    if len(cloud) == 0:
        raise ValueError("cannot render an empty gaussian cloud")
    params = cloud.pack(dtype)
    h, w = intr.height, intr.width
    gx, gy = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pixels = torch.as_tensor(np.stack([gx.ravel(), gy.ravel()], axis=-1), dtype=dtype)

    rgb_parts, depth_parts, acc_parts = [], [], []
    with torch.no_grad():
        for start in range(0, pixels.shape[0], chunk):
            rgb, depth, acc = render_pixels_from_tensors(params, intr, pose, pixels[start : start + chunk], background)
            rgb_parts.append(rgb.numpy())
            depth_parts.append(depth.numpy())
            acc_parts.append(acc.numpy())
    rgb = np.concatenate(rgb_parts).reshape(h, w, 3)
    depth = np.concatenate(depth_parts).reshape(h, w)
    acc = np.concatenate(acc_parts).reshape(h, w)
    return RenderedView(np.clip(rgb, 0.0, 1.0), depth, np.clip(acc, 0.0, 1.0))


def save_cloud(path, cloud: GaussianCloud) -> None:
    """Write the binary cloud checkpoint: GCLD header + 14 f32 per gaussian."""
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC + struct.pack("<II", CLOUD_VERSION, len(cloud)))
        for g in cloud.gaussians:
            rec = np.concatenate([g.mean, g.log_scale, g.rotation_q, [g.opacity_logit], g.color])
            fh.write(rec.astype("<f4").tobytes())


def load_cloud(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CLOUD_MAGIC:
        raise DataError(f"{path}: not a gaussian cloud checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CLOUD_VERSION:
        raise DataError(f"{path}: unsupported cloud checkpoint version {version}")
    data = np.frombuffer(blob, dtype="<f4", offset=12)
    if data.size != 14 * count:
        raise DataError(f"{path}: expected {14 * count} floats, found {data.size}")
    data = data.reshape(count, 14).astype(np.float64)
    return GaussianCloud(
        [
            Gaussian3D(rec[0:3], rec[3:6], rec[6:10], float(rec[10]), np.clip(rec[11:14], 0.0, 1.0))
            for rec in data
        ]
    )
