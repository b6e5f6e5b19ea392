"""Masked diffusion fill for occluded image regions.

Fills a target region by repeated neighborhood averaging anchored on
a set of fixed source pixels.  Pixels outside both sets never
participate, so values cannot bleed across a forbidden boundary.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import distance_transform_edt

from ._kernels import relax_fill
from .validate import require

__all__ = ["diffusion_fill"]


def diffusion_fill(
    values: np.ndarray,
    fill_mask: np.ndarray,
    source_mask: np.ndarray,
    tol: float = 1e-4,
    max_sweeps: int = 500,
) -> np.ndarray:
    """Fill masked pixels by iterative averaging over allowed neighbors.

    Fill pixels start at the value of their nearest source pixel, then
    relaxation sweeps pull each fill pixel toward the mean of its
    4-connected neighbors that are sources or fills (over-relaxed at the
    classical optimal factor for the window size, clamped to the source
    value range so every iterate respects the maximum principle).
    Sweeping stops when the largest per-sweep change drops below ``tol``
    or after ``max_sweeps`` sweeps.  A fill region with no reachable
    source keeps its nearest-source initialization, which realizes a
    global nearest-pixel fallback.

    Parameters
    ----------
    values:
        Image of shape ``(H, W)`` or ``(H, W, C)``.  Source pixels are
        read from here and are never modified.
    fill_mask:
        Boolean map of pixels to overwrite.
    source_mask:
        Boolean map of fixed boundary pixels.  Overlap with
        ``fill_mask`` is treated as source.
    tol:
        Convergence threshold on the max absolute per-sweep update.
    max_sweeps:
        Upper bound on sweep count.

    Returns
    -------
    numpy.ndarray
        A float32 copy of ``values`` with the fill region replaced.
    """
    arr = np.asarray(values, dtype=np.float32)
    require(arr.ndim in (2, 3), "values must be a 2-D or 3-D array")
    fill = np.asarray(fill_mask, dtype=bool)
    source = np.asarray(source_mask, dtype=bool)
    require(
        fill.shape == arr.shape[:2] and source.shape == arr.shape[:2],
        "masks must match the image height and width",
    )
    require(np.isfinite(tol) and tol > 0, "tol must be positive")
    require(max_sweeps >= 1, "max_sweeps must be at least 1")

    out = arr.copy()
    fill = fill & ~source
    if not fill.any() or not source.any():
        return out

    # Start every fill pixel at its nearest source pixel's value.
    _, (iy, ix) = distance_transform_edt(~source, return_indices=True)
    out[fill] = out[iy[fill], ix[fill]]

    # Restrict the sweeps to the fill bounding box; content farther away
    # only matters through the initialization above.
    ys, xs = np.nonzero(fill)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    y0 = max(0, y0 - 1)
    x0 = max(0, x0 - 1)
    y1 = min(fill.shape[0], y1 + 1)
    x1 = min(fill.shape[1], x1 + 1)
    win = out[y0:y1, x0:x1]
    if win.ndim == 2:
        win = win[:, :, None]
    wfill = fill[y0:y1, x0:x1]
    wvalid = (source | fill)[y0:y1, x0:x1]

    h, w, c = win.shape
    pvalid = np.zeros((h + 2, w + 2), dtype=np.float64)
    pvalid[1:-1, 1:-1] = wvalid
    counts = (
        pvalid[:-2, 1:-1] + pvalid[2:, 1:-1] + pvalid[1:-1, :-2] + pvalid[1:-1, 2:]
    )
    active = wfill & (counts > 0)
    if active.any():
        padded = np.zeros((h + 2, w + 2, c), dtype=np.float64)
        padded[1:-1, 1:-1] = win
        padded[1:-1, 1:-1][~wvalid] = 0.0
        inv = np.zeros((h, w), dtype=np.float64)
        inv[active] = 1.0 / counts[active]
        source_values = arr[source].reshape(-1, c).astype(np.float64)
        # Classical optimal over-relaxation for a 5-point stencil on an
        # h-by-w rectangle; narrow windows converge in O(width) sweeps.
        mu = 0.5 * (math.cos(math.pi / (h + 1)) + math.cos(math.pi / (w + 1)))
        omega = min(1.99, 2.0 / (1.0 + math.sqrt(1.0 - mu * mu)))
        relax_fill(
            padded,
            active.astype(np.uint8),
            inv,
            source_values.min(axis=0),
            source_values.max(axis=0),
            omega,
            float(tol),
            int(max_sweeps),
        )
        # win aliases out, so this writes the relaxed values through
        win[wfill] = padded[1:-1, 1:-1][wfill].astype(np.float32)
    return out
