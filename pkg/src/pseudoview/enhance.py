"""The pseudo-observation generator contract and its implementations.

An enhancer turns a rendered (rgb, depth, uncertainty) triple into a refined
image at the same resolution. The generative model itself lives behind this
interface (locally or across the wire); the local implementations here are
the deterministic stand-ins the rest of the system is tested with:

* ``IdentityEnhancer`` returns the rendering unchanged (null-information).
* ``OracleEnhancer`` returns the analytic ground-truth rendering at the
  request's viewpoint, upper-bounding enhancer quality.
* ``MockDegradeEnhancer`` blends the rendering toward ground truth by a
  fixed factor, for convergence-rate experiments.
* ``RemoteEnhancer`` speaks the HTTP wire protocol (multipart POST of PNG +
  PFM parts; PNG response).

This module also builds the coarse/fine training quartets used to fit a
real enhancer model, plus the additive-noise data augmentation.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np
import requests

from .consistency import render_any, uncertainty_for_view
from .data import SceneDataset, View
from .errors import DataError, EnhanceProtocolError, EnhancerUnavailable
from .geometry import Intrinsics, Pose
from .imgio import decode_png, encode_pfm, encode_png, write_pfm, write_png
from .optim import RepresentationSpec, TrainConfig, init_representation, train

RANGE_TOL = 1e-6
DEFAULT_NOISE_STD = 0.3
DEFAULT_DUO_FRACTION = 0.2  # coarse model sees one fifth of the views


@dataclass
class EnhanceRequest:
    """Inputs for one enhancement: rendering, ray-depth (invalid <= 0),
    uncertainty in [0, 1], plus the view identity and optional prompt."""

    rgb: np.ndarray
    depth: np.ndarray
    uncertainty: np.ndarray
    view_id: str
    prompt: str | None = None
    intrinsics: Intrinsics | None = None  # populates the wire meta part

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.uncertainty = np.asarray(self.uncertainty, dtype=np.float32)
        hw = self.rgb.shape[:2]
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be (H, W, 3), got {self.rgb.shape}")
        if self.depth.shape != hw or self.uncertainty.shape != hw:
            raise ValueError("depth/uncertainty resolution must match rgb")
        for name, arr in (("rgb", self.rgb), ("depth", self.depth), ("uncertainty", self.uncertainty)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


@dataclass
class PseudoObservation:
    """Enhancer output bound to its sampled camera."""

    image: np.ndarray
    pose: Pose
    intrinsics: Intrinsics
    round_index: int
    perceptual_score: float = math.nan  # lower = closer to the real inputs
    view_id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if np.any(self.image < 0.0) or np.any(self.image > 1.0):
            raise ValueError("pseudo-observation image out of [0, 1]")
        if self.round_index < 1:
            raise ValueError("round index starts at 1")

    def as_view(self) -> View:
        return View(view_id=self.view_id, image=self.image, pose=self.pose, split="train", provenance="pseudo")


@dataclass
class Quartet:
    """One enhancer training record; uncertainty is absent for
    noise-augmented pairs."""

    fine: np.ndarray
    coarse: np.ndarray
    depth: np.ndarray
    uncertainty: np.ndarray | None = None

    def __post_init__(self):
        hw = self.fine.shape[:2]
        if self.coarse.shape[:2] != hw or self.depth.shape != hw:
            raise ValueError("quartet parts must share a resolution")
        if self.uncertainty is not None and self.uncertainty.shape != hw:
            raise ValueError("quartet parts must share a resolution")


class IdentityEnhancer:
    """Returns the rendering bit-for-bit; the null-information reference."""

    def enhance(self, req: EnhanceRequest) -> np.ndarray:
        return req.rgb.copy()


class OracleEnhancer:
    """Returns exact ground-truth renderings of a synthetic scene.

    Poses are not part of the enhance contract, so the loop registers each
    sampled view's camera before asking for the enhancement.
    """

    def __init__(self, scene, intr: Intrinsics):
        self.scene = scene
        self.intr = intr
        self._poses: dict[str, Pose] = {}

    def register_view(self, view_id: str, pose: Pose) -> None:
        self._poses[view_id] = pose

    def enhance(self, req: EnhanceRequest) -> np.ndarray:
        from .harness.scene import render_ground_truth

        if req.view_id not in self._poses:
            raise DataError(f"oracle enhancer has no registered pose for view {req.view_id!r}")
        rgb, _ = render_ground_truth(self.scene, self.intr, self._poses[req.view_id])
        return rgb


class MockDegradeEnhancer(OracleEnhancer):
    """Test-only: blends the rendering toward ground truth by ``beta``."""

    def __init__(self, scene, intr: Intrinsics, beta: float = 0.5):
        super().__init__(scene, intr)
        self.beta = float(beta)

    def enhance(self, req: EnhanceRequest) -> np.ndarray:
        target = super().enhance(req)
        return ((1.0 - self.beta) * req.rgb + self.beta * target).astype(np.float32)


class RemoteEnhancer:
    """Client-side adapter speaking the HTTP wire protocol."""

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = 2, backoff: float = 0.2):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def healthcheck(self) -> None:
        """Probe GET /healthz; raises EnhancerUnavailable when unreachable."""
        url = self.endpoint.rstrip("/") + "/healthz"
        try:
            resp = requests.get(url, timeout=min(self.timeout, 5.0))
        except requests.RequestException as exc:
            raise EnhancerUnavailable(f"enhancer at {self.endpoint} failed its health check: {exc}") from exc
        if resp.status_code != 200:
            raise EnhancerUnavailable(f"enhancer health check returned HTTP {resp.status_code}")

    def enhance(self, req: EnhanceRequest) -> np.ndarray:
        return remote_enhance(self.endpoint, req, timeout=self.timeout, retries=self.retries, backoff=self.backoff)


def enhance(impl, req: EnhanceRequest) -> np.ndarray:
    """Run an enhancer implementation and validate its output contract:
    same resolution as the request, values in [0, 1]."""
    out = np.asarray(impl.enhance(req))
    if out.shape != req.rgb.shape:
        raise EnhanceProtocolError(f"enhancer returned shape {out.shape}, expected {req.rgb.shape}")
    if np.any(out < -RANGE_TOL) or np.any(out > 1.0 + RANGE_TOL) or not np.all(np.isfinite(out)):
        raise EnhanceProtocolError("enhancer output leaves the [0, 1] range")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _wire_meta(req: EnhanceRequest) -> bytes:
    if req.intrinsics is None:
        raise ValueError("remote enhancement requires request intrinsics for the meta part")
    meta = {
        "view_id": req.view_id,
        "fx": req.intrinsics.fx,
        "fy": req.intrinsics.fy,
        "cx": req.intrinsics.cx,
        "cy": req.intrinsics.cy,
    }
    if req.prompt is not None:
        meta["prompt"] = req.prompt
    return json.dumps(meta).encode("utf-8")


def remote_enhance(
    endpoint: str,
    req: EnhanceRequest,
    timeout: float = 30.0,
    retries: int = 2,
    backoff: float = 0.2,
) -> np.ndarray:
    """POST one request to a wire-protocol enhancer service.

    Transport failures and 5xx responses are retried (``retries`` extra
    attempts); 4xx responses and malformed payloads are protocol errors.
    """
    url = endpoint.rstrip("/") + "/enhance"
    files = {
        "rgb": ("rgb.png", encode_png(req.rgb), "image/png"),
        "depth": ("depth.pfm", encode_pfm(req.depth), "application/octet-stream"),
        "uncertainty": ("uncertainty.pfm", encode_pfm(req.uncertainty), "application/octet-stream"),
        "meta": ("meta.json", _wire_meta(req), "application/json"),
    }
    last_error = None
    for attempt in range(retries + 1):
        if attempt > 0 and backoff > 0:
            time.sleep(backoff * attempt)
        try:
            resp = requests.post(url, files=files, timeout=timeout)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if 400 <= resp.status_code < 500:
            raise EnhanceProtocolError(f"enhancer rejected the request: {resp.status_code} {resp.text[:200]}")
        if resp.status_code != 200:
            last_error = f"HTTP {resp.status_code}"
            continue
        try:
            image = decode_png(resp.content)
        except DataError as exc:
            raise EnhanceProtocolError(f"enhancer returned undecodable image: {exc}") from exc
        if image.shape != req.rgb.shape:
            raise EnhanceProtocolError(f"enhancer returned shape {image.shape}, expected {req.rgb.shape}")
        return image
    raise EnhancerUnavailable(f"enhancer at {endpoint} unreachable after {retries + 1} attempts: {last_error}")


def corrupt_image(image: np.ndarray, noise_std: float = DEFAULT_NOISE_STD, seed: int = 0) -> np.ndarray:
    """Additive per-pixel Gaussian noise, clamped to [0, 1]."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    image = np.asarray(image, dtype=np.float32)
    if noise_std == 0.0:
        return image.copy()
    rng = np.random.default_rng([int(seed), 0x6E6F])
    noisy = image + noise_std * rng.standard_normal(image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def make_duos(
    dataset: SceneDataset,
    rep_spec: RepresentationSpec,
    config: TrainConfig,
    subset_fraction: float = DEFAULT_DUO_FRACTION,
    poses: list[Pose] | None = None,
) -> list[Quartet]:
    """Train a coarse/fine duo and render paired quartets from shared poses.

    The fine model sees every real training view; the coarse one only
    ``ceil(fraction * W)`` of them (evenly spaced). Held-out poses default
    to the dataset's test split.
    """
    train_views = [v for v in dataset.train_views() if v.provenance == "real"]
    w = len(train_views)
    if w < 2:
        raise DataError("duo training needs at least two real views")
    n_sub = math.ceil(subset_fraction * w)
    if n_sub < 2:
        raise DataError(f"coarse subset of {n_sub} view(s) is too small; raise subset_fraction")
    subset_idx = sorted(set(int(round(i)) for i in np.linspace(0, w - 1, n_sub)))
    subset = [train_views[i] for i in subset_idx]

    if poses is None:
        poses = [v.pose for v in dataset.test_views()]
    if not poses:
        raise DataError("make_duos needs held-out poses (none given, dataset has no test split)")

    fine, _ = train(init_representation(rep_spec), train_views, dataset.intrinsics, config)
    coarse, _ = train(init_representation(rep_spec), subset, dataset.intrinsics, config)

    quartets = []
    for pose in poses:
        fine_view = render_any(fine, dataset.intrinsics, pose, config.render)
        coarse_view, umap = uncertainty_for_view(coarse, dataset, pose, config.render)
        quartets.append(
            Quartet(
                fine=fine_view.rgb,
                coarse=coarse_view.rgb,
                depth=coarse_view.depth_with_validity(),
                uncertainty=umap.values,
            )
        )
    return quartets


def make_noise_quartets(dataset: SceneDataset, noise_std: float = DEFAULT_NOISE_STD, seed: int = 0) -> list[Quartet]:
    """Augmentation pairs: noisy input vs clean target, no uncertainty map."""
    quartets = []
    for i, view in enumerate(v for v in dataset.views if v.depth is not None):
        quartets.append(
            Quartet(
                fine=view.image,
                coarse=corrupt_image(view.image, noise_std, seed=seed + i),
                depth=view.depth,
                uncertainty=None,
            )
        )
    return quartets


def write_quartets(out_dir, quartets: list[Quartet]) -> None:
    """Write quartets/<id>/{fine.png, coarse.png, depth.pfm, uncertainty.pfm}."""
    base = os.path.join(out_dir, "quartets")
    for i, q in enumerate(quartets):
        d = os.path.join(base, f"{i:04d}")
        os.makedirs(d, exist_ok=True)
        write_png(os.path.join(d, "fine.png"), q.fine)
        write_png(os.path.join(d, "coarse.png"), q.coarse)
        write_pfm(os.path.join(d, "depth.pfm"), q.depth)
        if q.uncertainty is not None:
            write_pfm(os.path.join(d, "uncertainty.pfm"), q.uncertainty)
