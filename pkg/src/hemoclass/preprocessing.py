"""Deterministic image-to-tensor pipeline for the backbone.

Decode to RGB, scale the shorter side to 224 with bilinear interpolation
(half-pixel centers), center-crop to 224x224, then map to [0, 1] and
standardize per channel with the ImageNet statistics.  Every step is
fixed so identical bytes always yield the bit-identical tensor.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from hemoclass.errors import DataError

TARGET_SIDE = 224

# per-channel normalization constants (RGB), ImageNet statistics
CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

# bump when any transform changes; recorded in feature provenance
PREPROCESSING_VERSION = "prep-1"


@dataclass
class ImageTensor:
    """Decoded RGB image, H x W x 3 uint8 row-major."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise DataError(f"expected HxWx3 image data, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise DataError(f"expected uint8 samples, got {self.data.dtype}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def decode_image(data: bytes, context: str = "<bytes>") -> ImageTensor:
    """Decode JPEG/PNG bytes to an RGB ImageTensor at original size."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {context}: {exc}") from exc
    return ImageTensor(arr)


def _resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers, float32 accumulation."""
    in_h, in_w = data.shape[:2]
    if (out_h, out_w) == (in_h, in_w):
        return data.astype(np.float32)

    def axis_coords(out_size, in_size):
        src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
        lo = np.floor(src).astype(np.int64)
        frac = (src - lo).astype(np.float32)
        lo0 = np.clip(lo, 0, in_size - 1)
        lo1 = np.clip(lo + 1, 0, in_size - 1)
        return lo0, lo1, frac

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)
    img = data.astype(np.float32)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def resize_center_crop(img: ImageTensor, side: int = TARGET_SIDE) -> ImageTensor:
    """Scale the shorter side to `side` (aspect preserved), center-crop square.

    The resampled values are rounded back to uint8 half-up so the chain
    stays deterministic.
    """
    h, w = img.height, img.width
    if h <= w:
        out_h = side
        out_w = max(side, int(round(w * side / h)))
    else:
        out_w = side
        out_h = max(side, int(round(h * side / w)))
    resized = _resize_bilinear(img.data, out_h, out_w)
    top = (out_h - side) // 2
    left = (out_w - side) // 2
    crop = resized[top : top + side, left : left + side]
    return ImageTensor(np.floor(crop + 0.5).clip(0, 255).astype(np.uint8))


def normalize(img: ImageTensor) -> np.ndarray:
    """224x224x3 uint8 -> channel-planar 3x224x224 float32.

    Samples are scaled to [0, 1] and standardized per channel.
    """
    if (img.height, img.width) != (TARGET_SIDE, TARGET_SIDE):
        raise DataError(
            f"normalize expects {TARGET_SIDE}x{TARGET_SIDE}, got {img.height}x{img.width}")
    scaled = img.data.astype(np.float32) / np.float32(255.0)
    out = (scaled - CHANNEL_MEAN) / CHANNEL_STD
    return np.ascontiguousarray(out.transpose(2, 0, 1), dtype=np.float32)


def prepare(data: bytes, context: str = "<bytes>") -> np.ndarray:
    """Full chain: decode -> resize/crop -> normalize."""
    return normalize(resize_center_crop(decode_image(data, context)))
