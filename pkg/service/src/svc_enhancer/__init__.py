"""Enhancer service speaking the pseudo-observation wire protocol.

POST /enhance takes a multipart body with parts ``rgb`` (8-bit PNG),
``depth`` (PFM), ``uncertainty`` (PFM), and ``meta`` (JSON); the response is
an 8-bit PNG at the request resolution. GET /healthz answers ``ok``. Three
modes sit behind the same surface: echo (identity), restore (classical
image restoration), and diffusion (a pretrained conditional diffusion
model consuming RGB + depth + uncertainty control channels).
"""

from .config import ServiceConfig, ServiceError
from .server import serve, start_server

__version__ = "0.1.0"

__all__ = ["ServiceConfig", "ServiceError", "serve", "start_server", "__version__"]
