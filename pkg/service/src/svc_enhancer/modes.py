"""The three enhancement backends behind the wire protocol.

Each backend is a callable ``(rgb, depth, uncertainty, meta) -> rgb`` over
float arrays; the server guarantees the output is re-encoded at the request
resolution. Non-echo backends load their model at construction time, so a
missing dependency or model fails the service at startup rather than
per-request.
"""

from __future__ import annotations

import numpy as np

from .codecs import resize_to
from .config import ServiceConfig, ServiceError

DIFFUSION_RESOLUTION = 512  # pretrained latent models want fixed-size crops


class EchoMode:
    """Returns the rgb part re-encoded; the protocol-conformance reference."""

    def __call__(self, rgb, depth, uncertainty, meta):
        return rgb


class RestoreMode:
    """Off-the-shelf image restoration (denoising) via OpenCV.

    model_id picks the algorithm: "nlmeans" (default) or "median".
    """

    def __init__(self, model_id: str | None):
        self.algorithm = model_id or "nlmeans"
        if self.algorithm not in ("nlmeans", "median"):
            raise ServiceError(f"unknown restore algorithm {self.algorithm!r}")
        try:
            import cv2
        except ImportError as exc:
            raise ServiceError("restore mode needs opencv-python-headless installed") from exc
        self._cv2 = cv2

    def __call__(self, rgb, depth, uncertainty, meta):
        cv2 = self._cv2
        quant = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
        if self.algorithm == "nlmeans":
            out = cv2.fastNlMeansDenoisingColored(quant, None, 10, 10, 7, 21)
        else:
            out = cv2.medianBlur(quant, 3)
        return out.astype(np.float32) / 255.0


class DiffusionMode:
    """Pretrained conditional diffusion model with RGB+depth+uncertainty
    control channels.

    Requires the `diffusers` stack and a locally available model; nothing is
    fine-tuned here. Inputs are resized to the model resolution and the
    sample is resized back to the request resolution.
    """

    def __init__(self, model_id: str | None):
        if not model_id:
            raise ServiceError("diffusion mode needs MODEL_ID pointing at a pretrained pipeline")
        try:
            import torch  # noqa: F401
            from diffusers import StableDiffusionControlNetImg2ImgPipeline  # type: ignore
        except ImportError as exc:
            raise ServiceError(
                "diffusion mode needs the 'diffusers' package and a local pretrained model"
            ) from exc
        self._pipeline_cls = StableDiffusionControlNetImg2ImgPipeline
        try:
            self.pipe = self._pipeline_cls.from_pretrained(model_id)
        except Exception as exc:
            raise ServiceError(f"could not load diffusion model {model_id!r}: {exc}") from exc

    def _control_stack(self, rgb, depth, uncertainty):
        # five control channels: 3 coarse RGB, 1 depth, 1 uncertainty
        d = depth.copy()
        valid = d > 0
        if valid.any():
            d[valid] = d[valid] / max(float(d[valid].max()), 1e-6)
        d[~valid] = 0.0
        return np.concatenate([rgb, d[..., None], uncertainty[..., None]], axis=-1)

    def __call__(self, rgb, depth, uncertainty, meta):
        h, w = rgb.shape[:2]
        rgb_in = resize_to(rgb, DIFFUSION_RESOLUTION, DIFFUSION_RESOLUTION)
        control = self._control_stack(rgb_in, resize_to(np.repeat(depth[..., None], 3, -1), DIFFUSION_RESOLUTION, DIFFUSION_RESOLUTION)[..., 0], resize_to(np.repeat(uncertainty[..., None], 3, -1), DIFFUSION_RESOLUTION, DIFFUSION_RESOLUTION)[..., 0])
        result = self.pipe(
            prompt=meta.get("prompt", ""),
            image=rgb_in,
            control_image=control,
        ).images[0]
        out = np.asarray(result, dtype=np.float32) / 255.0
        return resize_to(out, w, h)


def build_mode(config: ServiceConfig):
    if config.mode == "echo":
        return EchoMode()
    if config.mode == "restore":
        return RestoreMode(config.model_id)
    return DiffusionMode(config.model_id)
