"""Image codecs: 8-bit PNG for RGB, PFM for float depth/uncertainty maps.

PFM files are written single-channel ("Pf"), little-endian (scale -1.0),
with the standard bottom-to-top scanline order. Depth maps keep their
validity convention across the wire: invalid pixels are negative.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .errors import DataError


def encode_png(image: np.ndarray) -> bytes:
    """Encode an (H, W, 3) float image in [0, 1] as 8-bit RGB PNG bytes."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quant, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(blob: bytes) -> np.ndarray:
    """Decode PNG bytes to an (H, W, 3) float32 image in [0, 1]."""
    try:
        img = Image.open(io.BytesIO(blob))
        img = img.convert("RGB")
    except Exception as exc:
        raise DataError(f"failed to decode PNG: {exc}") from exc
    return np.asarray(img, dtype=np.float32) / 255.0


def write_png(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image))


def read_png(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


def encode_pfm(values: np.ndarray) -> bytes:
    """Encode a single-channel float map as little-endian PFM bytes."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W) map, got {arr.shape}")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + arr[::-1].astype("<f4").tobytes()


def decode_pfm(blob: bytes) -> np.ndarray:
    """Decode single-channel PFM bytes to an (H, W) float32 map."""
    try:
        magic_end = blob.index(b"\n")
        dims_end = blob.index(b"\n", magic_end + 1)
        scale_end = blob.index(b"\n", dims_end + 1)
        magic = blob[:magic_end].decode("ascii").strip()
        w, h = (int(v) for v in blob[magic_end + 1 : dims_end].split())
        scale = float(blob[dims_end + 1 : scale_end])
    except Exception as exc:
        raise DataError(f"malformed PFM header: {exc}") from exc
    if magic != "Pf":
        raise DataError(f"expected single-channel PFM ('Pf'), got {magic!r}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(blob, dtype=dtype, count=w * h, offset=scale_end + 1)
    if data.size != w * h:
        raise DataError("truncated PFM payload")
    return np.ascontiguousarray(data.reshape(h, w)[::-1]).astype(np.float32)


def write_pfm(path, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pfm(values))


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pfm(fh.read())
