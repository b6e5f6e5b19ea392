"""Input validation shared across the package.

Raster conventions: color images are (H, W, C) float32 with C in {1, 3} and
values in [0, 1]; depth maps are (H, W) float32, strictly positive and finite.
The helpers accept float64 input and cast down, but reject integer dtypes so
callers cannot silently feed 0..255 data.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ValidationError", "require", "as_image", "as_depth"]


class ValidationError(ValueError):
    """An input broke one of the documented invariants."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _as_float32(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValidationError(
            f"{name}: expected a float array, got dtype {arr.dtype}"
        )
    return np.ascontiguousarray(arr, dtype=np.float32)


def as_image(arr, name: str = "image") -> np.ndarray:
    """Validate and return an (H, W, C) float32 color raster in [0, 1]."""
    arr = np.asarray(arr)
    require(
        arr.ndim == 3 and arr.shape[2] in (1, 3),
        f"{name}: expected shape (H, W, 1|3), got {arr.shape}",
    )
    require(arr.shape[0] > 0 and arr.shape[1] > 0, f"{name}: empty raster")
    out = _as_float32(arr, name)
    require(bool(np.isfinite(out).all()), f"{name}: values must be finite")
    lo = float(out.min())
    hi = float(out.max())
    require(
        lo >= -1e-5 and hi <= 1.0 + 1e-5,
        f"{name}: values must lie in [0, 1], got [{lo:g}, {hi:g}]",
    )
    return np.clip(out, 0.0, 1.0)


def as_depth(arr, name: str = "depth") -> np.ndarray:
    """Validate and return an (H, W) float32 depth map, strictly positive."""
    arr = np.asarray(arr)
    require(arr.ndim == 2, f"{name}: expected shape (H, W), got {arr.shape}")
    require(arr.shape[0] > 0 and arr.shape[1] > 0, f"{name}: empty raster")
    out = _as_float32(arr, name)
    require(bool(np.isfinite(out).all()), f"{name}: values must be finite")
    require(float(out.min()) > 0.0, f"{name}: depth values must be > 0")
    return out
