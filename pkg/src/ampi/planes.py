"""Scene-adaptive placement of plane depths.

Planes start uniformly spaced in disparity and are refined with a 1-D
Lloyd iteration that minimizes the mean absolute disparity error
between each pixel and the planes it is assigned to.  Assignment is
either hard (nearest plane) or soft (a temperature-controlled softmax
over disparity distance); the update step is a mass-weighted median,
which is the exact minimizer of an L1 quantization error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validate import ValidationError, as_depth, require

__all__ = [
    "AdjustParams",
    "PlaneLosses",
    "adjust_planes",
    "init_planes",
    "plane_losses",
    "soft_assign",
]

# Minimal disparity gap used to break exact ties so plane depths stay
# strictly increasing.
_DEDUP_EPS = 1e-6


@dataclass(frozen=True)
class PlaneLosses:
    """Regularizer values for a plane placement.

    Attributes
    ----------
    rank:
        Mean positive part of consecutive disparity increases.  Zero
        whenever depths are ordered near to far; defined as zero for a
        single plane.
    assign:
        Mean absolute disparity error of representing the depth map
        with the given planes under the given per-plane masks.
    """

    rank: float
    assign: float


@dataclass(frozen=True)
class AdjustParams:
    """Settings for :func:`adjust_planes`.

    Attributes
    ----------
    temperature:
        Softness of the soft assignment, in units of the depth map's
        disparity range (so the same value behaves alike across
        scenes).  Ignored in hard mode.
    iterations:
        Number of Lloyd iterations.
    mode:
        ``"hard"`` for nearest-plane assignment, ``"soft"`` for the
        softmax assignment.
    reseed_threshold:
        Clusters whose share of the total pixel mass is at or below
        this fraction are reseeded at the pixel with the largest
        current error contribution.
    """

    temperature: float = 0.05
    iterations: int = 25
    mode: str = "hard"
    reseed_threshold: float = 0.0

    def __post_init__(self) -> None:
        require(
            np.isfinite(self.temperature) and self.temperature > 0,
            "temperature must be a positive finite scalar",
        )
        require(
            int(self.iterations) == self.iterations and self.iterations >= 1,
            "iterations must be a positive integer",
        )
        require(self.mode in ("hard", "soft"), "mode must be 'hard' or 'soft'")
        require(
            np.isfinite(self.reseed_threshold) and 0 <= self.reseed_threshold < 1,
            "reseed_threshold must lie in [0, 1)",
        )


def _as_plane_depths(planes: np.ndarray) -> np.ndarray:
    """Validate a plane depth list: finite, positive, strictly increasing."""
    arr = np.asarray(planes, dtype=np.float64)
    require(arr.ndim == 1 and arr.size >= 1, "plane depths must be a 1-D list")
    require(bool(np.all(np.isfinite(arr)) and np.all(arr > 0)), "plane depths must be finite and positive")
    require(bool(np.all(np.diff(arr) > 0)), "plane depths must be strictly increasing")
    return arr


def init_planes(n: int, d_min: float, d_max: float) -> np.ndarray:
    """Place ``n`` plane depths uniformly spaced in disparity.

    Disparities run from ``1 / d_min`` down to ``1 / d_max``
    inclusive, so the nearest and farthest planes sit exactly at the
    range endpoints.  A single plane is placed at the midpoint
    disparity.

    Parameters
    ----------
    n:
        Number of planes, at least 1.
    d_min, d_max:
        Depth range, ``0 < d_min < d_max``.

    Returns
    -------
    numpy.ndarray
        Strictly increasing float64 depths of shape ``(n,)``.
    """
    require(int(n) == n and n >= 1, "plane count must be a positive integer")
    require(
        np.isfinite(d_min) and np.isfinite(d_max) and 0 < d_min < d_max,
        "depth range must satisfy 0 < d_min < d_max",
    )
    hi = 1.0 / float(d_min)
    lo = 1.0 / float(d_max)
    if n == 1:
        disparities = np.array([(hi + lo) / 2.0])
    else:
        disparities = np.linspace(hi, lo, int(n))
    return 1.0 / disparities


def soft_assign(depth: np.ndarray, planes: np.ndarray, tau: float) -> np.ndarray:
    """Softly assign each pixel to planes by disparity proximity.

    Mask ``i`` is the softmax over planes of the negative absolute
    disparity distance ``-|1/D - 1/d_i| / tau``, so masks are
    non-negative and sum to 1 at every pixel.  ``tau`` is an absolute
    disparity scale here; callers working across scenes usually scale
    it by the disparity range of the depth map.

    Parameters
    ----------
    depth:
        Positive depth map of shape ``(H, W)``.
    planes:
        Strictly increasing plane depths of shape ``(N,)``.
    tau:
        Positive softness scale in disparity units.

    Returns
    -------
    numpy.ndarray
        Mask stack of shape ``(N, H, W)``, float32.
    """
    dmap = as_depth(depth)
    pd = _as_plane_depths(planes)
    require(np.isfinite(tau) and tau > 0, "tau must be a positive finite scalar")
    disp = 1.0 / dmap.astype(np.float64)
    scores = -np.abs(disp[None, :, :] - (1.0 / pd)[:, None, None]) / float(tau)
    scores -= scores.max(axis=0, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=0, keepdims=True)
    return scores.astype(np.float32)


def plane_losses(depth: np.ndarray, planes: np.ndarray, masks: np.ndarray) -> PlaneLosses:
    """Evaluate the ordering and assignment regularizers.

    The assignment loss is the per-pixel mask-weighted absolute
    disparity error, averaged over the image.  The rank loss averages
    ``max(0, disp(d[i+1]) - disp(d[i]))`` over consecutive planes and
    is therefore zero exactly when depths increase strictly.

    Parameters
    ----------
    depth:
        Positive depth map of shape ``(H, W)``.
    planes:
        Strictly increasing plane depths of shape ``(N,)``.
    masks:
        Per-plane weights of shape ``(N, H, W)``, non-negative.

    Returns
    -------
    PlaneLosses
        The ``rank`` and ``assign`` values as floats.
    """
    dmap = as_depth(depth)
    pd = _as_plane_depths(planes)
    m = np.asarray(masks, dtype=np.float64)
    require(
        m.shape == (pd.size,) + dmap.shape,
        "masks must have shape (n_planes, height, width) matching depth",
    )
    require(bool(np.all(np.isfinite(m)) and np.all(m >= 0)), "masks must be finite and non-negative")
    disp = 1.0 / dmap.astype(np.float64)
    pdisp = 1.0 / pd
    err = np.abs(disp[None, :, :] - pdisp[:, None, None])
    assign = float((m * err).sum() / dmap.size)
    if pd.size == 1:
        rank = 0.0
    else:
        rank = float(np.maximum(0.0, np.diff(pdisp)).sum() / (pd.size - 1))
    return PlaneLosses(rank=rank, assign=assign)


def _strictly_decreasing(disparities: np.ndarray) -> np.ndarray:
    """Force a descending disparity list strictly decreasing by tiny nudges."""
    out = disparities.astype(np.float64).copy()
    for i in range(1, out.size):
        cap = out[i - 1] - _DEDUP_EPS
        if cap <= 0.0:
            cap = out[i - 1] * 0.5
        if out[i] > cap:
            out[i] = cap
    return out


def _hard_pass(
    ds: np.ndarray, centers: np.ndarray, reseed_mass: float
) -> tuple[float, np.ndarray]:
    """One hard Lloyd pass over sorted disparities.

    Returns the mean absolute error of ``centers`` under nearest-plane
    assignment together with the updated centers (cluster medians,
    empty clusters reseeded at the worst-served pixel).
    """
    n = centers.size
    mids = (centers[:-1] + centers[1:]) / 2.0
    bounds = np.concatenate(([0], np.searchsorted(ds, mids), [ds.size]))
    counts = np.diff(bounds)
    err = np.abs(ds - np.repeat(centers, counts))
    loss = float(err.sum() / ds.size)
    updated = centers.copy()
    for k in range(n):
        lo, hi = bounds[k], bounds[k + 1]
        if hi - lo > reseed_mass:
            updated[k] = ds[lo + (hi - lo - 1) // 2]
    for k in range(n):
        if counts[k] <= reseed_mass:
            worst = int(np.argmax(err))
            updated[k] = ds[worst]
            err[worst] = -1.0
    return loss, np.sort(updated)


def _soft_pass(
    ds: np.ndarray, centers: np.ndarray, tau: float, reseed_mass: float
) -> tuple[float, np.ndarray]:
    """One soft Lloyd pass: softmax masses, then per-plane weighted medians."""
    dist = np.abs(ds[None, :] - centers[:, None])
    scores = -dist / tau
    scores -= scores.max(axis=0, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=0, keepdims=True)
    loss = float((scores * dist).sum() / ds.size)
    updated = centers.copy()
    point_err = (scores * dist).sum(axis=0)
    for k in range(centers.size):
        cw = np.cumsum(scores[k])
        total = cw[-1]
        if total <= reseed_mass:
            worst = int(np.argmax(point_err))
            updated[k] = ds[worst]
            point_err[worst] = -1.0
        else:
            updated[k] = ds[np.searchsorted(cw, total / 2.0)]
    return loss, np.sort(updated)


def adjust_planes(
    depth: np.ndarray, n: int, params: AdjustParams | None = None
) -> np.ndarray:
    """Fit ``n`` plane depths to a depth map by Lloyd iteration.

    Starting from the disparity-uniform placement over the map's depth
    range, each iteration assigns pixels to planes (hard or soft) and
    moves every plane to the mass-weighted median disparity of its
    cluster.  The best placement seen, including the initialization,
    is returned, so the assignment loss never exceeds the uniform
    init's.  In hard mode the loss is checked to be non-increasing at
    every iteration.

    Parameters
    ----------
    depth:
        Positive depth map of shape ``(H, W)``.
    n:
        Number of planes, at least 1.
    params:
        Iteration settings; defaults to ``AdjustParams()``.

    Returns
    -------
    numpy.ndarray
        Strictly increasing float64 depths of shape ``(n,)``.
    """
    dmap = as_depth(depth)
    require(int(n) == n and n >= 1, "plane count must be a positive integer")
    if params is None:
        params = AdjustParams()
    elif not isinstance(params, AdjustParams):
        raise ValidationError("params must be an AdjustParams instance")

    ds = np.sort(1.0 / dmap.astype(np.float64).ravel())
    span = ds[-1] - ds[0]
    if span <= 0.0:
        flat = _strictly_decreasing(np.full(int(n), ds[0]))
        return 1.0 / flat

    if n == 1:
        centers = np.array([(ds[0] + ds[-1]) / 2.0])
    else:
        centers = np.sort(1.0 / init_planes(int(n), 1.0 / ds[-1], 1.0 / ds[0]))
    reseed_mass = params.reseed_threshold * ds.size
    tau = params.temperature * span

    best_loss = np.inf
    best = centers
    prev_loss = np.inf
    for _ in range(params.iterations + 1):
        if params.mode == "hard":
            loss, updated = _hard_pass(ds, centers, reseed_mass)
            assert loss <= prev_loss + 1e-12 * max(1.0, prev_loss), (
                "hard-mode loss increased across an iteration"
            )
            prev_loss = loss
        else:
            loss, updated = _soft_pass(ds, centers, tau, reseed_mass)
        if loss < best_loss:
            best_loss = loss
            best = centers
        centers = updated

    dedup = _strictly_decreasing(best[::-1])
    return 1.0 / dedup
