"""Raw array files and PNG export.

Raw layout: 16-byte header (magic ``b"CRFD"``, then little-endian u32 height,
width, channels) followed by little-endian float32 data in row-major order
with channels fastest. Images are written with one channel, displacement
fields with two.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

MAGIC = b"CRFD"
_HEADER = struct.Struct("<4sIII")


def write_raw(path, array) -> None:
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"raw files hold (H, W) or (H, W, C) arrays, got shape {arr.shape}")
    h, w, c = arr.shape
    data = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, h, w, c))
        f.write(data.tobytes())


def read_raw(path) -> np.ndarray:
    """Read a raw file; single-channel arrays come back as ``(H, W)``."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, h, w, c = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * h * w * c
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(h, w, c)
    arr = arr.astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr


def write_png(path, image) -> None:
    """8-bit PNG (grayscale, or RGB for ``(H, W, 3)``); [0, 1] maps onto [0, 255]."""
    arr = np.asarray(image, dtype=np.float64)
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[-1] == 3)):
        raise ValueError(f"cannot write array of shape {arr.shape} as PNG")
    img = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(img).save(path)
