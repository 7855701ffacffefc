"""Input validation helpers for array-level APIs (estimator and service)."""

from __future__ import annotations

import numpy as np

from .schema import SchemaError, check_attribute_matrix, check_attribute_vector

__all__ = [
    "check_attribute_matrix",
    "check_attribute_vector",
    "check_image_array",
    "SchemaError",
]


def check_image_array(X, image_size: int | None = None) -> np.ndarray:
    """Validate a batch of images as (N, H, W, 3) float32 in [-1, 1].

    A single (H, W, 3) image is promoted to a batch of one. H and W must be
    equal powers of two (the encoder halves the resolution per block).
    """
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"images must be (N, H, W, 3), got shape {arr.shape}")
    h, w = arr.shape[1], arr.shape[2]
    if h != w:
        raise ValueError(f"images must be square, got {h}x{w}")
    if h < 2 or (h & (h - 1)) != 0:
        raise ValueError(f"image side must be a power of two, got {h}")
    if image_size is not None and h != image_size:
        raise ValueError(f"images are {h}x{w}, model expects {image_size}x{image_size}")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < -1.0 or hi > 1.0:
        raise ValueError(f"pixel values must lie in [-1, 1], got range [{lo:.4g}, {hi:.4g}]")
    return arr
