"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass

MODES = ("echo", "restore", "diffusion")


class ServiceError(Exception):
    """Configuration or model-loading failure; the service cannot start."""


@dataclass(frozen=True)
class ServiceConfig:
    mode: str = "echo"
    port: int = 8080
    model_id: str | None = None  # restore algorithm name or diffusion model id
    max_concurrent: int = 4
    host: str = "127.0.0.1"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ServiceError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0 <= self.port <= 65535:
            raise ServiceError(f"invalid port {self.port}")
        if self.max_concurrent < 1:
            raise ServiceError("max_concurrent must be >= 1")
