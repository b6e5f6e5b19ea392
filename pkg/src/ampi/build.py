"""Constructing a multiplane image from a single view and its depth.

The image is distributed over planes with the soft disparity
assignment, per-plane alphas are chosen so that compositing exactly
reproduces those assignment weights, and regions hidden behind depth
discontinuities are backfilled with diffused background color so that
novel views do not tear open empty cracks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics
from .fill import diffusion_fill
from .mpi import Mpi, MpiPlane, alpha_to_sigma
from .planes import soft_assign
from .validate import ValidationError, as_depth, as_image, require

__all__ = [
    "BuildParams",
    "MaskTriple",
    "build_mpi",
    "derive_masks",
    "inpaint_hidden",
    "occlusion_regions",
    "visible_alphas",
]

# Hidden-band marks are dropped wherever the remaining context mass
# exceeds this, keeping the backfill off planes that still hold visible
# content at that pixel.
_BAND_CONTEXT_LIMIT = 0.01


@dataclass(frozen=True)
class MaskTriple:
    """Per-plane assignment masks and their cumulative companions.

    ``feature`` holds the soft per-plane assignment (summing to 1 over
    planes at each pixel).  ``context`` accumulates mass from each
    plane to the farthest one, marking where background content lives;
    ``rendering`` accumulates from the nearest plane forward, marking
    content at or in front of each plane.
    """

    feature: np.ndarray
    context: np.ndarray
    rendering: np.ndarray


@dataclass(frozen=True)
class BuildParams:
    """Settings for :func:`build_mpi`.

    Attributes
    ----------
    tau:
        Soft-assignment temperature in units of the depth map's
        disparity range.
    hidden_band:
        Width in pixels of the backfilled band behind each depth
        discontinuity.
    grad_thresh:
        Disparity step per pixel that counts as a discontinuity.
    eps:
        Mass floor below which alphas are forced to zero and
        rendering-mask cleanup applies.
    """

    tau: float = 0.05
    hidden_band: int = 16
    grad_thresh: float = 0.04
    eps: float = 1e-4

    def __post_init__(self) -> None:
        require(np.isfinite(self.tau) and self.tau > 0, "tau must be positive")
        require(
            int(self.hidden_band) == self.hidden_band and self.hidden_band >= 0,
            "hidden_band must be a non-negative integer",
        )
        require(
            np.isfinite(self.grad_thresh) and self.grad_thresh > 0,
            "grad_thresh must be positive",
        )
        require(np.isfinite(self.eps) and self.eps > 0, "eps must be positive")


def derive_masks(feature: np.ndarray) -> MaskTriple:
    """Build context and rendering masks from a feature mask stack.

    Parameters
    ----------
    feature:
        Stack of shape ``(N, H, W)`` whose per-pixel sum over planes
        is 1 within 1e-5.

    Returns
    -------
    MaskTriple
        Float32 stacks satisfying ``context[i] = sum(feature[i:])``
        and ``rendering[i] = sum(feature[:i + 1])``.
    """
    f = np.asarray(feature, dtype=np.float64)
    require(f.ndim == 3 and f.shape[0] >= 1, "feature stack must have shape (n_planes, height, width)")
    require(bool(np.all(np.isfinite(f)) and np.all(f >= 0)), "feature masks must be finite and non-negative")
    require(
        bool(np.all(np.abs(f.sum(axis=0) - 1.0) <= 1e-5)),
        "feature masks must sum to 1 over planes at every pixel",
    )
    rendering = np.cumsum(f, axis=0)
    context = np.cumsum(f[::-1], axis=0)[::-1]
    return MaskTriple(
        feature=f.astype(np.float32),
        context=np.ascontiguousarray(context, dtype=np.float32),
        rendering=rendering.astype(np.float32),
    )


def visible_alphas(masks: MaskTriple, eps: float = 1e-4) -> np.ndarray:
    """Alphas whose front-to-back composite weights equal the feature masks.

    Solving the over-composite weight recursion for alpha gives
    ``alpha[i] = feature[i] / context[i]``; the division is floored at
    ``eps`` and pixels with less than ``eps`` context mass get alpha 0.

    Returns
    -------
    numpy.ndarray
        Stack of shape ``(N, H, W)``, float32, in ``[0, 1]``.
    """
    require(np.isfinite(eps) and eps > 0, "eps must be positive")
    feature = masks.feature.astype(np.float64)
    context = masks.context.astype(np.float64)
    alphas = np.clip(feature / np.maximum(context, eps), 0.0, 1.0)
    alphas[context < eps] = 0.0
    return alphas.astype(np.float32)


def _nearest_plane_index(disp: np.ndarray, plane_disp: np.ndarray) -> np.ndarray:
    """Index of the disparity-nearest plane per pixel.

    ``plane_disp`` is descending (near plane first), matching the
    plane ordering used everywhere else.
    """
    if plane_disp.size == 1:
        return np.zeros(disp.shape, dtype=np.int64)
    ascending = plane_disp[::-1]
    pos = np.clip(np.searchsorted(ascending, disp), 1, ascending.size - 1)
    left = ascending[pos - 1]
    right = ascending[pos]
    take_right = (disp - left) > (right - disp)
    idx_ascending = np.where(take_right, pos, pos - 1)
    return (ascending.size - 1) - idx_ascending


def occlusion_regions(
    depth: np.ndarray,
    planes: np.ndarray,
    grad_thresh: float = 0.04,
    hidden_band: int = 16,
) -> np.ndarray:
    """Mark per-plane regions hidden behind depth discontinuities.

    Wherever disparity drops by more than ``grad_thresh`` between two
    neighboring pixels, the foreground side hides background content.
    A band of ``hidden_band`` pixels extending from the edge into the
    foreground side is marked on every plane strictly behind the
    foreground pixel's plane, up to and including the background
    pixel's plane.

    Parameters
    ----------
    depth:
        Positive depth map of shape ``(H, W)``.
    planes:
        Strictly increasing plane depths.
    grad_thresh:
        Disparity difference per pixel that counts as an edge.
    hidden_band:
        Band width in pixels; 0 disables marking entirely.

    Returns
    -------
    numpy.ndarray
        Boolean stack of shape ``(N, H, W)``.
    """
    dmap = as_depth(depth)
    pd = np.asarray(planes, dtype=np.float64)
    require(pd.ndim == 1 and pd.size >= 1, "planes must be a 1-D list")
    require(bool(np.all(np.diff(pd) > 0)), "plane depths must be strictly increasing")
    require(np.isfinite(grad_thresh) and grad_thresh > 0, "grad_thresh must be positive")
    require(int(hidden_band) == hidden_band and hidden_band >= 0, "hidden_band must be a non-negative integer")

    n = pd.size
    h, w = dmap.shape
    regions = np.zeros((n, h, w), dtype=bool)
    if hidden_band == 0 or n == 1:
        return regions

    disp = 1.0 / dmap.astype(np.float64)
    plane_disp = 1.0 / pd
    assign = _nearest_plane_index(disp, plane_disp)
    band = int(hidden_band)

    acc = np.zeros((n + 1, h, w + 1), dtype=np.int32)
    _mark_axis(acc, disp, assign, grad_thresh, band)
    accT = np.zeros((n + 1, w, h + 1), dtype=np.int32)
    _mark_axis(accT, disp.T, assign.T, grad_thresh, band)

    counts = np.cumsum(np.cumsum(acc, axis=0), axis=2)[:-1, :, :-1]
    countsT = np.cumsum(np.cumsum(accT, axis=0), axis=2)[:-1, :, :-1]
    regions = (counts > 0) | (countsT > 0).transpose(0, 2, 1)
    return regions


def _mark_axis(
    acc: np.ndarray,
    disp: np.ndarray,
    assign: np.ndarray,
    grad_thresh: float,
    band: int,
) -> None:
    """Scatter hidden-band intervals for both horizontal directions.

    ``acc`` has shape ``(N + 1, H, W + 1)`` and receives 2-D
    difference-of-prefix marks: plane interval along axis 0, column
    interval along axis 2.
    """
    h, w = disp.shape
    step = disp[:, :-1] - disp[:, 1:]

    # Foreground on the left: band extends leftward from the edge.
    ys, xs = np.nonzero(step > grad_thresh)
    if ys.size:
        j_fg = assign[ys, xs]
        j_bg = assign[ys, xs + 1]
        keep = j_bg > j_fg
        ys, xs, j_fg, j_bg = ys[keep], xs[keep], j_fg[keep], j_bg[keep]
        c0 = np.maximum(0, xs - band + 1)
        c1 = xs + 1
        _scatter(acc, j_fg + 1, j_bg + 1, ys, c0, c1)

    # Foreground on the right: band extends rightward from the edge.
    ys, xs = np.nonzero(-step > grad_thresh)
    if ys.size:
        j_fg = assign[ys, xs + 1]
        j_bg = assign[ys, xs]
        keep = j_bg > j_fg
        ys, xs, j_fg, j_bg = ys[keep], xs[keep], j_fg[keep], j_bg[keep]
        c0 = xs + 1
        c1 = np.minimum(w, xs + 1 + band)
        _scatter(acc, j_fg + 1, j_bg + 1, ys, c0, c1)


def _scatter(acc, p0, p1, ys, c0, c1) -> None:
    """Add a +1 block over plane rows [p0, p1) and columns [c0, c1)."""
    np.add.at(acc, (p0, ys, c0), 1)
    np.add.at(acc, (p0, ys, c1), -1)
    np.add.at(acc, (p1, ys, c0), -1)
    np.add.at(acc, (p1, ys, c1), 1)


def inpaint_hidden(
    color: np.ndarray,
    depth: np.ndarray,
    masks: MaskTriple,
    regions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Fill hidden regions with diffused background color.

    For each plane the fill may only read pixels whose context mass
    exceeds 0.5, which excludes every foreground pixel; the filled
    band is made fully opaque so that disocclusions expose solid
    content instead of cracks.

    Parameters
    ----------
    color:
        Source image of shape ``(H, W, 3)``.
    depth:
        Source depth map, same size.
    masks:
        Mask triple from :func:`derive_masks`.
    regions:
        Boolean stack from :func:`occlusion_regions`.

    Returns
    -------
    tuple
        ``(hidden_color, hidden_alpha)`` stacks of shapes
        ``(N, H, W, 3)`` and ``(N, H, W)``; zeros outside the regions.
    """
    img = as_image(color)
    dmap = as_depth(depth)
    require(img.shape[:2] == dmap.shape, "color and depth sizes must match")
    reg = np.asarray(regions, dtype=bool)
    n = masks.feature.shape[0]
    require(reg.shape == (n,) + dmap.shape, "regions must have shape (n_planes, height, width)")

    hidden_color = np.zeros((n,) + img.shape, dtype=np.float32)
    hidden_alpha = np.zeros((n,) + dmap.shape, dtype=np.float32)
    for i in range(n):
        if not reg[i].any():
            continue
        context_px = masks.context[i] > 0.5
        filled = diffusion_fill(img, reg[i], context_px & ~reg[i])
        hidden_color[i][reg[i]] = filled[reg[i]]
        hidden_alpha[i][reg[i]] = 1.0
    return hidden_color, hidden_alpha


def build_mpi(
    image: np.ndarray,
    depth: np.ndarray,
    planes: np.ndarray,
    intrinsics: Intrinsics,
    params: BuildParams | None = None,
) -> Mpi:
    """Assemble a multiplane image from one view.

    The visible pass copies the source color onto every plane with
    alphas that make composite weights reproduce the soft assignment;
    the hidden pass overlays diffused background color, fully opaque,
    inside occlusion bands; finally color and alpha are zeroed where
    almost no content lives at or in front of a plane, and alphas are
    converted to densities.

    Parameters
    ----------
    image:
        Source color of shape ``(H, W, 3)``, values in ``[0, 1]``.
    depth:
        Positive depth map of the same size.
    planes:
        Strictly increasing plane depths, typically from
        :func:`ampi.planes.adjust_planes`.
    intrinsics:
        Source camera model with matching width and height.
    params:
        Build settings; defaults to ``BuildParams()``.

    Returns
    -------
    Mpi
        The built multiplane image.
    """
    img = as_image(image)
    dmap = as_depth(depth)
    require(img.shape[:2] == dmap.shape, "image and depth sizes must match")
    pd = np.asarray(planes, dtype=np.float64)
    require(pd.ndim == 1 and pd.size >= 1, "planes must be a 1-D list")
    require(bool(np.all(pd > 0) & np.all(np.isfinite(pd))), "plane depths must be finite and positive")
    require(bool(np.all(np.diff(pd) > 0)), "plane depths must be strictly increasing")
    if not isinstance(intrinsics, Intrinsics):
        raise ValidationError("intrinsics must be an Intrinsics instance")
    require(
        intrinsics.width == img.shape[1] and intrinsics.height == img.shape[0],
        "intrinsics size must match the image",
    )
    if params is None:
        params = BuildParams()
    elif not isinstance(params, BuildParams):
        raise ValidationError("params must be a BuildParams instance")

    feature = soft_assign(dmap, pd, _raw_tau(dmap, pd, params.tau))
    masks = derive_masks(feature)
    alphas = visible_alphas(masks, params.eps)

    n = pd.size
    colors = np.broadcast_to(img, (n,) + img.shape).copy()

    regions = occlusion_regions(dmap, pd, params.grad_thresh, params.hidden_band)
    # The opaque backfill takes over exactly the composite weight that
    # context still holds, so a plane keeping visible mass at a pixel
    # (near-duplicate plane depths, thin foreground strips) must stay
    # untouched there; 0.01 bounds the stolen weight at 1%.
    regions &= masks.context < _BAND_CONTEXT_LIMIT
    if regions.any():
        hidden_color, hidden_alpha = inpaint_hidden(img, dmap, masks, regions)
        colors[regions] = hidden_color[regions]
        alphas[regions] = hidden_alpha[regions]

    cleanup = masks.rendering < params.eps
    colors[cleanup] = 0.0
    alphas[cleanup] = 0.0

    densities = alpha_to_sigma(alphas, pd, intrinsics)
    built = [
        MpiPlane(color=colors[i], density=densities[i]) for i in range(n)
    ]
    return Mpi(planes=built, depths=pd, intrinsics=intrinsics)


def _raw_tau(dmap: np.ndarray, planes: np.ndarray, tau: float) -> float:
    """Temperature in absolute disparity units.

    Scales by the depth map's disparity span; a constant map falls
    back to the smallest plane disparity gap so assignment still
    concentrates on the nearest plane.
    """
    disp = 1.0 / dmap.astype(np.float64)
    span = float(disp.max() - disp.min())
    if span > 0:
        return tau * span
    pdisp = 1.0 / np.asarray(planes, dtype=np.float64)
    if pdisp.size > 1:
        gap = float(np.abs(np.diff(pdisp)).min())
        if gap > 0:
            return tau * gap
    return tau
