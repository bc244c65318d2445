"""The densification loop: alternate training with pseudo-observation growth.

Starting from W real views the loop trains an initial representation, then
for each round samples novel viewpoints inside the rig's bounding box,
renders them with the current model together with reprojection uncertainty,
asks the enhancer for pseudo-observations, drops the fraction least similar
to the real inputs, adds the survivors to the pool, and retrains. Per-round
sample counts are inflated so the post-filter pool reaches roughly
``target_multiplier * W`` views after the last round.

Everything is deterministic for a fixed seed and a deterministic enhancer;
pool insertion is ordered by view id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .consistency import render_any, uncertainty_for_view
from .data import SceneDataset, View
from .enhance import EnhanceRequest, PseudoObservation, enhance
from .errors import DataError, EnhancerUnavailable
from .geometry import Intrinsics, Pose, look_at
from .harness.metrics import psnr as psnr_metric, ssim as ssim_metric
from .optim import RepresentationSpec, TrainConfig, init_representation, train

BBOX_INFLATION = 1.05


@dataclass(frozen=True)
class LoopConfig:
    rep: RepresentationSpec = RepresentationSpec()
    train: TrainConfig = TrainConfig()
    initial_train: TrainConfig | None = None
    rounds: int = 5
    target_multiplier: float = 10.0
    keep_fraction: float = 0.8
    seed: int = 0
    fallback: str = "skip"  # on enhancer unavailability: "skip" | "identity"

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.target_multiplier > 1:
            raise ValueError("target_multiplier must be > 1")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must be in (0, 1]")
        if self.fallback not in ("skip", "identity"):
            raise ValueError(f"unknown fallback policy {self.fallback!r}")
        if self.rep.kind != self.train.representation:
            raise ValueError("rep.kind and train.representation disagree")


@dataclass
class ObservationPool:
    """Real views (immutable) plus accumulated pseudo-observations."""

    real: tuple[View, ...]
    pseudo: list[PseudoObservation] = dc_field(default_factory=list)

    def __post_init__(self):
        self.real = tuple(self.real)

    @property
    def size(self) -> int:
        return len(self.real) + len(self.pseudo)

    def extend(self, kept: list[PseudoObservation]) -> None:
        self.pseudo.extend(sorted(kept, key=lambda p: p.view_id))

    def training_views(self) -> list[View]:
        return list(self.real) + [p.as_view() for p in self.pseudo]


@dataclass
class RoundMetrics:
    round_index: int
    pool_size: int
    train_psnr: float
    test_psnr: float
    test_ssim: float
    mean_uncertainty: float


def sample_novel_views(input_poses: list[Pose], intr: Intrinsics, count: int, seed) -> list[Pose]:
    """Novel cameras: positions uniform in the (5% inflated) bounding box of
    the input camera centers, aimed at the centroid of the input look-at
    targets, world +z up."""
    del intr  # orientation policy does not depend on the intrinsics
    if len(input_poses) < 2:
        raise DataError("novel view sampling needs at least two input poses")
    if count < 1:
        raise ValueError("count must be >= 1")
    centers = np.stack([p.center for p in input_poses])
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    if float(np.max(hi - lo)) == 0.0:
        raise DataError("input cameras are coincident; the sampling box is degenerate")
    mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0 * BBOX_INFLATION

    # each input's aim target: the closest point on its optical axis to the rig centroid
    rig_centroid = centers.mean(axis=0)
    targets = []
    for p in input_poses:
        fwd = p.rotation[:, 2]
        targets.append(p.center + fwd * max(0.0, float(np.dot(rig_centroid - p.center, fwd))))
    aim = np.mean(targets, axis=0)

    rng = np.random.default_rng([*np.atleast_1d(seed).tolist(), 0x6E76])
    poses = []
    for _ in range(count):
        eye = mid + (2.0 * rng.random(3) - 1.0) * half
        if float(np.linalg.norm(aim - eye)) < 1e-9:
            eye = eye + np.array([0.0, 0.0, 1e-6])
        poses.append(look_at(eye, aim))
    return poses


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def perceptual_distance(image: np.ndarray, references: list[np.ndarray]) -> float:
    """Min over references of a 3-scale structural dissimilarity.

    The score is 1 minus the mean single-scale SSIM over three dyadic
    scales; only its ranking matters for the pseudo-observation filter, so
    any monotone perceptual proxy (including a learned one on the service
    side) can take its place.
    """
    if not references:
        raise ValueError("perceptual_distance needs a non-empty reference set")
    image = np.asarray(image, dtype=np.float64)
    best = math.inf
    for ref in references:
        ref = np.asarray(ref, dtype=np.float64)
        if ref.shape != image.shape:
            raise ValueError(f"reference shape {ref.shape} != image shape {image.shape}")
        a, b, scores = image, ref, []
        for _ in range(3):
            scores.append(ssim_metric(a, b))
            a, b = _downsample2(a), _downsample2(b)
        best = min(best, 1.0 - float(np.mean(scores)))
    return best


def filter_pseudo(
    candidates: list[PseudoObservation],
    real_views: list[View],
    keep_fraction: float,
) -> list[PseudoObservation]:
    """Keep the ceil(keep_fraction * N) candidates most similar to the real
    inputs (ties broken by view id); scores are recorded on the candidates."""
    if not candidates:
        raise ValueError("filter_pseudo needs a non-empty candidate set")
    refs = [v.image for v in real_views]
    for cand in candidates:
        cand.perceptual_score = perceptual_distance(cand.image, refs)
    n_keep = math.ceil(keep_fraction * len(candidates))
    ranked = sorted(candidates, key=lambda c: (c.perceptual_score, c.view_id))
    return sorted(ranked[:n_keep], key=lambda c: c.view_id)


def views_per_round(n_real: int, config: LoopConfig) -> int:
    """Sampled-per-round count so kept views reach the target multiplier."""
    return math.ceil(n_real * (config.target_multiplier - 1.0) / config.rounds / config.keep_fraction)


def evaluate(representation, dataset: SceneDataset, cfg, views: list[View] | None = None) -> tuple[float, float]:
    """Mean (PSNR, SSIM) against ground truth over the given views
    (defaults to the test split)."""
    views = dataset.test_views() if views is None else views
    if not views:
        return math.nan, math.nan
    psnrs, ssims = [], []
    for v in views:
        rendered = render_any(representation, dataset.intrinsics, v.pose, cfg)
        psnrs.append(psnr_metric(rendered.rgb, v.image))
        ssims.append(ssim_metric(rendered.rgb, v.image))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def _round_train_config(config: LoopConfig, round_index: int) -> TrainConfig:
    return replace(config.train, seed=config.train.seed + round_index)


def run_deceptive_loop(dataset: SceneDataset, config: LoopConfig, enhancer):
    """Run the full densification loop.

    Returns ``(representation, pool, metrics)`` where metrics holds one
    RoundMetrics entry per round.
    """
    real_train = [v for v in dataset.train_views() if v.provenance == "real"]
    w = len(real_train)
    if w < 2:
        raise DataError("the loop needs at least two real training views")
    intr = dataset.intrinsics
    rcfg = config.train.render

    rep = init_representation(replace(config.rep, init_seed=config.rep.init_seed + config.seed))
    initial_cfg = config.initial_train if config.initial_train is not None else config.train
    rep, _ = train(rep, real_train, intr, initial_cfg)

    pool = ObservationPool(real=tuple(real_train))
    metrics: list[RoundMetrics] = []
    n_sample = views_per_round(w, config)
    input_poses = [v.pose for v in real_train]

    for r in range(1, config.rounds + 1):
        poses = sample_novel_views(input_poses, intr, n_sample, seed=[config.seed, r])
        candidates: list[PseudoObservation] = []
        uncertainty_means: list[float] = []
        for j, pose in enumerate(poses):
            vid = f"pseudo_r{r:02d}_{j:03d}"
            rendered, umap = uncertainty_for_view(rep, dataset, pose, rcfg)
            uncertainty_means.append(float(umap.values.mean()))
            req = EnhanceRequest(
                rgb=rendered.rgb,
                depth=rendered.depth_with_validity(),
                uncertainty=umap.values,
                view_id=vid,
                intrinsics=intr,
            )
            if hasattr(enhancer, "register_view"):
                enhancer.register_view(vid, pose)
            try:
                image = enhance(enhancer, req)
            except EnhancerUnavailable:
                if config.fallback == "skip":
                    continue
                image = req.rgb
            candidates.append(
                PseudoObservation(image=image, pose=pose, intrinsics=intr, round_index=r, view_id=vid)
            )
        if candidates:
            pool.extend(filter_pseudo(candidates, real_train, config.keep_fraction))

        rep, _ = train(rep, pool.training_views(), intr, _round_train_config(config, r))

        train_psnr, _ = evaluate(rep, dataset, rcfg, views=real_train)
        test_psnr, test_ssim = evaluate(rep, dataset, rcfg)
        metrics.append(
            RoundMetrics(
                round_index=r,
                pool_size=pool.size,
                train_psnr=train_psnr,
                test_psnr=test_psnr,
                test_ssim=test_ssim,
                mean_uncertainty=float(np.mean(uncertainty_means)) if uncertainty_means else math.nan,
            )
        )
    return rep, pool, metrics


def run_baseline(dataset: SceneDataset, config: LoopConfig):
    """No-densification reference: identical optimization budget and seeds,
    but the pool never grows past the real views."""
    real_train = [v for v in dataset.train_views() if v.provenance == "real"]
    if len(real_train) < 2:
        raise DataError("the baseline needs at least two real training views")
    intr = dataset.intrinsics
    rep = init_representation(replace(config.rep, init_seed=config.rep.init_seed + config.seed))
    initial_cfg = config.initial_train if config.initial_train is not None else config.train
    rep, _ = train(rep, real_train, intr, initial_cfg)
    for r in range(1, config.rounds + 1):
        rep, _ = train(rep, real_train, intr, _round_train_config(config, r))
    return rep


def write_metrics_csv(path, metrics: list[RoundMetrics]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,pool_size,train_psnr,test_psnr,test_ssim,mean_uncertainty\n")
        for m in metrics:
            fh.write(
                f"{m.round_index},{m.pool_size},{m.train_psnr!r},{m.test_psnr!r},"
                f"{m.test_ssim!r},{m.mean_uncertainty!r}\n"
            )
