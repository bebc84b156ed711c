"""On-disk formats: masks/index maps as 8-bit PNG, depth maps as raw float32.

Depth file layout (little-endian)::

    bytes 0-3    magic  b"HDPT"
    bytes 4-7    uint32 format version (1)
    bytes 8-11   uint32 width
    bytes 12-15  uint32 height
    bytes 16-    float32 depth, row-major (H rows of W), +inf where empty
"""
from __future__ import annotations

import base64
import io
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MissingFileError, SceneFormatError

DEPTH_MAGIC = b"HDPT"
DEPTH_HEADER = struct.Struct("<4sIII")


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8), mode="L").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_mask_png(path, mask) -> None:
    Path(path).write_bytes(_png_bytes(np.where(np.asarray(mask) > 0.5, 255, 0)))


def read_gray_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError("file not found", path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise SceneFormatError(f"cannot decode image ({exc})", path) from exc


def read_mask_png(path) -> np.ndarray:
    return (read_gray_png(path) >= 128).astype(np.uint8)


def write_index_png(path, index) -> None:
    index = np.asarray(index)
    if index.max(initial=0) > 255 or index.min(initial=0) < 0:
        raise ValueError("instance ids must fit in 0..255 for PNG index maps")
    Path(path).write_bytes(_png_bytes(index))


def read_index_png(path) -> np.ndarray:
    return read_gray_png(path).astype(np.int64)


def write_gray_png(path, values) -> None:
    Path(path).write_bytes(_png_bytes(values))


def write_depth(path, depth) -> None:
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    Path(path).write_bytes(DEPTH_HEADER.pack(DEPTH_MAGIC, 1, w, h) + depth.tobytes(order="C"))


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, version, w, h = DEPTH_HEADER.unpack_from(raw)
    if magic != DEPTH_MAGIC or version != 1:
        raise SceneFormatError("not a depth map", path)
    return np.frombuffer(raw, dtype="<f4", offset=DEPTH_HEADER.size, count=w * h).reshape(h, w).astype(np.float64)


def mask_to_b64(mask) -> str:
    return base64.b64encode(_png_bytes(np.where(np.asarray(mask) > 0.5, 255, 0))).decode("ascii")


def image_to_b64(img) -> str:
    img = np.asarray(img)
    buf = io.BytesIO()
    mode = "RGB" if img.ndim == 3 else "L"
    Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8), mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_mask(data: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(data))) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def depth_to_png(depth) -> np.ndarray:
    """8-bit visualisation: near = bright, empty = 0."""
    d = np.asarray(depth, dtype=np.float64)
    fin = np.isfinite(d)
    out = np.zeros(d.shape, dtype=np.uint8)
    if fin.any():
        lo, hi = d[fin].min(), d[fin].max()
        span = hi - lo if hi > lo else 1.0
        out[fin] = np.round(255 - 200 * (d[fin] - lo) / span).astype(np.uint8)
    return out
