"""Wire codecs: 8-bit PNG images and single-channel PFM float maps."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


class CodecError(ValueError):
    pass


def decode_png(blob: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(blob)).convert("RGB")
    except Exception as exc:
        raise CodecError(f"bad PNG payload: {exc}") from exc
    return np.asarray(img, dtype=np.float32) / 255.0


def encode_png(image: np.ndarray) -> bytes:
    quant = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quant, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_pfm(blob: bytes) -> np.ndarray:
    try:
        magic_end = blob.index(b"\n")
        dims_end = blob.index(b"\n", magic_end + 1)
        scale_end = blob.index(b"\n", dims_end + 1)
        magic = blob[:magic_end].decode("ascii").strip()
        w, h = (int(v) for v in blob[magic_end + 1 : dims_end].split())
        scale = float(blob[dims_end + 1 : scale_end])
    except Exception as exc:
        raise CodecError(f"bad PFM header: {exc}") from exc
    if magic != "Pf":
        raise CodecError(f"expected single-channel PFM, got {magic!r}")
    data = np.frombuffer(blob, dtype="<f4" if scale < 0 else ">f4", count=w * h, offset=scale_end + 1)
    if data.size != w * h:
        raise CodecError("truncated PFM payload")
    return np.ascontiguousarray(data.reshape(h, w)[::-1])


def resize_to(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of a float image in [0, 1]."""
    quant = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    resized = Image.fromarray(quant, mode="RGB").resize((width, height), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float32) / 255.0
