"""Photometric loss, gradients, Adam updates, and training loops.

Both scene representations train against the same objective: the mean over a
pixel batch of the squared RGB error between rendered and observed colors.
Gradients are exact reverse-mode derivatives of that loss with respect to
every raw parameter tensor; `finite_difference_check` provides the
independent central-difference verification used by tests and the CLI.

Training samples one view per iteration, uniformly across the pool, so real
and pseudo observations are weighted identically and per-provenance draw
frequencies are proportional to their counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .data import View
from .errors import NumericalAbort
from .field import RadianceGrid, sample as sample_field
from .geometry import Intrinsics, Pose
from .gsplat import GaussianCloud, render_pixels_from_tensors
from .volren import RaySamples, RenderConfig, composite_color, pixel_rays, stratified_samples

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

DEFAULT_LEARNING_RATE = {"grid": 0.05, "gaussians": 0.005}
DEFAULT_LR_SCALES = {
    "grid": {"density_raw": 1.0, "color_raw": 1.0},
    "gaussians": {"means": 1.0, "log_scales": 1.0, "rotations": 0.2, "opacities": 10.0, "colors_raw": 5.0},
}
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    representation: str = "grid"
    iterations: int = 2000
    batch_size: int = 1024
    learning_rate: float | None = None  # None -> per-representation default
    seed: int = 0
    lr_scales: dict | None = None
    precision: str = "float32"
    log_every: int = 100
    render: RenderConfig = RenderConfig()

    def __post_init__(self):
        if self.representation not in ("grid", "gaussians"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.precision not in _DTYPES:
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def effective_learning_rate(self) -> float:
        return DEFAULT_LEARNING_RATE[self.representation] if self.learning_rate is None else self.learning_rate

    @property
    def effective_lr_scales(self) -> dict:
        return dict(DEFAULT_LR_SCALES[self.representation]) if self.lr_scales is None else dict(self.lr_scales)

    @property
    def dtype(self) -> torch.dtype:
        return _DTYPES[self.precision]


@dataclass(frozen=True)
class RepresentationSpec:
    """How to build a fresh representation before training."""

    kind: str = "grid"
    bbox: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    grid_resolution: tuple[int, int, int] = (64, 64, 64)
    gaussian_count: int = 2000
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("grid", "gaussians"):
            raise ValueError(f"unknown representation kind {self.kind!r}")


def init_representation(spec: RepresentationSpec):
    from .field import init_grid
    from .gsplat import init_cloud

    bbox = np.asarray(spec.bbox, dtype=np.float64).reshape(2, 3)
    if spec.kind == "grid":
        return init_grid(spec.grid_resolution, bbox, spec.init_seed)
    return init_cloud(spec.gaussian_count, bbox, spec.init_seed)


@dataclass
class LossReport:
    iteration: int
    loss: float
    grad_norms: dict[str, float]

    def __post_init__(self):
        if not (math.isfinite(self.loss) and all(math.isfinite(v) for v in self.grad_norms.values())):
            raise ValueError("loss report contains non-finite values")

    @property
    def psnr_train(self) -> float:
        # loss is the per-ray squared L2 over 3 channels; per-channel MSE = loss/3
        return 99.0 if self.loss <= 0 else min(99.0, -10.0 * math.log10(self.loss / 3.0))


@dataclass(frozen=True)
class PixelBatch:
    """A batch of pixel centers from a single view."""

    intr: Intrinsics
    pose: Pose
    pixels: np.ndarray  # (B, 2) continuous pixel coordinates

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2))


def photometric_loss(rendered: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the squared RGB distance."""
    if rendered.shape != target.shape:
        raise ValueError(f"rendered batch {tuple(rendered.shape)} != target batch {tuple(target.shape)}")
    return ((rendered - target) ** 2).sum(dim=-1).mean()


def sample_view_index(rng: np.random.Generator, n_views: int) -> int:
    """Uniform view pick; real and pseudo views share one pool."""
    return int(rng.integers(n_views))


class _TrainableGrid:
    kind = "grid"

    def __init__(self, grid: RadianceGrid, render: RenderConfig, dtype: torch.dtype):
        self.bbox = grid.bbox.copy()
        self.render_cfg = render
        self.params = {
            "density_raw": grid.density_raw.detach().to(dtype).clone().requires_grad_(True),
            "color_raw": grid.color_raw.detach().to(dtype).clone().requires_grad_(True),
        }

    def _grid(self) -> RadianceGrid:
        return RadianceGrid(self.params["density_raw"], self.params["color_raw"], self.bbox)

    def render_batch(self, batch: PixelBatch, rng: np.random.Generator) -> torch.Tensor:
        grid = self._grid()
        pixels = torch.as_tensor(batch.pixels, dtype=grid.dtype)
        origins, dirs = pixel_rays(batch.intr, batch.pose, pixels)
        samples = stratified_samples(grid, origins, dirs, self.render_cfg, rng)
        return composite_color(samples, self.render_cfg.background)

    def export(self) -> RadianceGrid:
        return RadianceGrid(
            self.params["density_raw"].detach().clone(),
            self.params["color_raw"].detach().clone(),
            self.bbox,
        )


class _TrainableGaussians:
    kind = "gaussians"

    def __init__(self, cloud: GaussianCloud, render: RenderConfig, dtype: torch.dtype):
        self.render_cfg = render
        self.params = {k: v.clone().requires_grad_(True) for k, v in cloud.pack(dtype).items()}

    def render_batch(self, batch: PixelBatch, rng: np.random.Generator) -> torch.Tensor:
        del rng  # splatting needs no stochastic sampling
        pixels = torch.as_tensor(batch.pixels, dtype=self.params["means"].dtype)
        rgb, _, _ = render_pixels_from_tensors(self.params, batch.intr, batch.pose, pixels, self.render_cfg.background)
        return rgb

    def export(self) -> GaussianCloud:
        return GaussianCloud.from_tensors(self.params)


def _wrap(representation, render: RenderConfig, dtype: torch.dtype):
    if isinstance(representation, RadianceGrid):
        return _TrainableGrid(representation, render, dtype)
    if isinstance(representation, GaussianCloud):
        return _TrainableGaussians(representation, render, dtype)
    raise TypeError(f"unsupported representation type {type(representation).__name__}")


def backward(representation, batch: PixelBatch, targets: np.ndarray, config: TrainConfig):
    """Loss and exact gradients of the photometric loss for one batch.

    Returns ``(loss_value, grads)`` where ``grads`` maps parameter block
    names to tensors shaped like the raw parameters.
    """
    if len(batch.pixels) == 0:
        raise ValueError("batch must be non-empty")
    trainable = _wrap(representation, config.render, config.dtype)
    rng = np.random.default_rng([config.seed, 0x6777])
    rendered = trainable.render_batch(batch, rng)
    target_t = torch.as_tensor(np.asarray(targets), dtype=rendered.dtype)
    loss = photometric_loss(rendered, target_t)
    grads = _compute_grads(loss, trainable.params)
    return float(loss.detach()), grads


def _compute_grads(loss: torch.Tensor, params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    names = sorted(params)
    raw = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, raw)}


def init_adam_state(params: dict[str, torch.Tensor]) -> dict:
    return {
        "step": 0,
        "m": {n: torch.zeros_like(p) for n, p in params.items()},
        "v": {n: torch.zeros_like(p) for n, p in params.items()},
    }


def step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: dict,
    learning_rate: float,
    lr_scales: dict | None = None,
) -> dict:
    """One deterministic Adam update applied in place to ``params``."""
    for name in sorted(params):
        if grads[name].shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for block {name!r}")
        if not bool(torch.isfinite(grads[name]).all()):
            raise NumericalAbort(f"non-finite gradient in parameter block {name!r}")
    state["step"] += 1
    t = state["step"]
    b1, b2 = ADAM_BETAS
    with torch.no_grad():
        for name in sorted(params):
            g = grads[name]
            m = state["m"][name]
            v = state["v"][name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            lr = learning_rate * (1.0 if lr_scales is None else lr_scales.get(name, 1.0))
            params[name].sub_(lr * m_hat / (v_hat.sqrt() + ADAM_EPS))
    return state


def train(representation, views: list[View], intr: Intrinsics, config: TrainConfig):
    """Optimize a representation against a pool of views.

    Every iteration samples one view uniformly (real and pseudo identically
    weighted) and a batch of random pixels within it. Returns the trained
    representation (same type as the input) and a loss trace.
    """
    if not views:
        raise ValueError("training needs a non-empty view pool")
    trainable = _wrap(representation, config.render, config.dtype)
    state = init_adam_state(trainable.params)
    lr = config.effective_learning_rate
    scales = config.effective_lr_scales
    rng = np.random.default_rng([config.seed, 0x7472])
    h, w = intr.height, intr.width
    trace: list[LossReport] = []

    for it in range(config.iterations):
        view = views[sample_view_index(rng, len(views))]
        xs = rng.integers(0, w, size=config.batch_size)
        ys = rng.integers(0, h, size=config.batch_size)
        pixels = np.stack([xs + 0.5, ys + 0.5], axis=-1)
        targets = view.image[ys, xs]

        batch = PixelBatch(intr, view.pose, pixels)
        rendered = trainable.render_batch(batch, rng)
        loss = photometric_loss(rendered, torch.as_tensor(targets, dtype=rendered.dtype))
        grads = _compute_grads(loss, trainable.params)
        step(trainable.params, grads, state, lr, scales)

        if it % config.log_every == 0 or it == config.iterations - 1:
            norms = {n: float(g.norm()) for n, g in grads.items()}
            trace.append(LossReport(iteration=it, loss=float(loss.detach()), grad_norms=norms))

    return trainable.export(), trace


def write_loss_trace(path, trace: list[LossReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loss,psnr_train\n")
        for entry in trace:
            fh.write(f"{entry.iteration},{entry.loss!r},{entry.psnr_train!r}\n")


def finite_difference_check(loss_fn, params: dict[str, torch.Tensor], n_params: int = 120, h: float = 1e-4, seed: int = 0):
    """Compare autograd gradients of ``loss_fn(params)`` against central
    finite differences on a random subset of well-excited parameters.

    ``loss_fn`` must be deterministic and must not consume external RNG
    state, so both ±h evaluations see identical sample positions. Returns
    ``(max_rel_err, n_checked)``.
    """
    loss = loss_fn(params)
    grads = _compute_grads(loss, params)

    candidates: list[tuple[str, int]] = []
    for name in sorted(params):
        g = grads[name].reshape(-1)
        strong = torch.nonzero(g.abs() > max(1e-8, 1e-3 * float(g.abs().max()))).reshape(-1)
        candidates.extend((name, int(i)) for i in strong)
    if not candidates:
        raise ValueError("no parameters received usable gradients; enlarge the probe batch")
    rng = np.random.default_rng([seed, 0xFD])
    chosen = [candidates[i] for i in rng.choice(len(candidates), size=min(n_params, len(candidates)), replace=False)]

    max_rel = 0.0
    with torch.no_grad():
        for name, idx in chosen:
            flat = params[name].reshape(-1)
            orig = float(flat[idx])
            flat[idx] = orig + h
            up = float(loss_fn(params))
            flat[idx] = orig - h
            down = float(loss_fn(params))
            flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            an = float(grads[name].reshape(-1)[idx])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-12)
            max_rel = max(max_rel, rel)
    return max_rel, len(chosen)


def standard_gradient_check(representation_kind: str, seed: int = 0, n_params: int = 120, h: float = 1e-4):
    """Canned double-precision gradient check scenario for either
    representation; used by tests and by the `grad-check` CLI command."""
    from .field import init_grid
    from .gsplat import init_cloud

    rng = np.random.default_rng([seed, 0x6763])
    intr = Intrinsics(fx=40.0, fy=40.0, cx=16.0, cy=16.0, width=32, height=32)
    pose = Pose(np.eye(3), np.array([0.0, 0.0, -4.0]))
    bbox = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    n_pix = 160
    pixels = np.stack(
        [rng.integers(0, intr.width, n_pix) + 0.5, rng.integers(0, intr.height, n_pix) + 0.5], axis=-1
    )
    targets = rng.random((n_pix, 3))
    pixels_t = torch.as_tensor(pixels, dtype=torch.float64)
    targets_t = torch.as_tensor(targets, dtype=torch.float64)

    if representation_kind == "grid":
        grid = init_grid((6, 7, 5), bbox, seed=seed).to(torch.float64)
        params = {
            "density_raw": (grid.density_raw + 0.5 * torch.as_tensor(rng.standard_normal(grid.density_raw.shape))).requires_grad_(True),
            "color_raw": torch.as_tensor(rng.standard_normal(grid.color_raw.shape)).requires_grad_(True),
        }
        origins, dirs = pixel_rays(intr, pose, pixels_t)
        k = 24
        t = 2.0 + 4.0 * (torch.arange(k, dtype=torch.float64) + torch.as_tensor(rng.random((n_pix, k)))) / k
        delta = torch.empty_like(t)
        delta[:, :-1] = t[:, 1:] - t[:, :-1]
        delta[:, -1] = 6.0 - t[:, -1]
        pts = origins.unsqueeze(1) + dirs.unsqueeze(1) * t.unsqueeze(-1)

        def loss_fn(p):
            g = RadianceGrid(p["density_raw"], p["color_raw"], bbox)
            sigma, color = sample_field(g, pts)
            rgb = composite_color(RaySamples(t=t, delta=delta, sigma=sigma, color=color), (0.0, 0.0, 0.0))
            return photometric_loss(rgb, targets_t)

    elif representation_kind == "gaussians":
        cloud = init_cloud(12, np.array([[-0.6, -0.6, -0.6], [0.6, 0.6, 0.6]]), seed=seed)
        params = {k: v.to(torch.float64).requires_grad_(True) for k, v in cloud.pack(torch.float64).items()}
        with torch.no_grad():
            params["opacities"] += 1.5  # healthy alphas, away from the skip threshold
            params["log_scales"] += 1.0

        def loss_fn(p):
            rgb, _, _ = render_pixels_from_tensors(p, intr, pose, pixels_t, (0.0, 0.0, 0.0))
            return photometric_loss(rgb, targets_t)

    else:
        raise ValueError(f"unknown representation {representation_kind!r}")

    return finite_difference_check(loss_fn, params, n_params=n_params, h=h, seed=seed)
