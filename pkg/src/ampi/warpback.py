"""Stereo pair generation by forward mesh warping and back-warping.

A depth map lifts the image into a per-pixel triangle mesh that a
z-buffered software rasterizer renders into a sampled nearby camera.
Pixels the new view cannot see become holes; a background-biased
diffusion fill closes them so the pair is usable as training or
evaluation data, with the hole mask kept alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, label

from . import _kernels
from .camera import CameraPose, Intrinsics, fov_intrinsics, rotation_xyz
from .fill import diffusion_fill
from .validate import ValidationError, as_depth, as_image, require

__all__ = [
    "CameraSample",
    "CameraSampleRanges",
    "RasterResult",
    "StereoPair",
    "TriangleMesh",
    "fill_holes",
    "generate_pair",
    "mesh_from_depth",
    "rasterize",
    "sample_camera",
    "warp_back",
]

# Camera-space depth below which a triangle is discarded instead of clipped.
NEAR_PLANE = 1e-4

# Projected coordinates this close to an integer snap onto it, keeping
# pixel-center coverage stable against projection roundoff.
_SNAP_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertex positions and colors with triangle connectivity.

    Positions live in the camera frame of the view the mesh was built
    from; ``triangles`` indexes into the vertex arrays.
    """

    positions: np.ndarray
    colors: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64)
        col = np.asarray(self.colors, dtype=np.float32)
        tri = np.asarray(self.triangles, dtype=np.int32)
        require(pos.ndim == 2 and pos.shape[1] == 3, "positions must have shape (V, 3)")
        require(bool(np.all(np.isfinite(pos))), "vertex positions must be finite")
        require(col.shape == pos.shape, "colors must have shape (V, 3)")
        require(tri.ndim == 2 and tri.shape[1] == 3, "triangles must have shape (M, 3)")
        if tri.size:
            require(
                int(tri.min()) >= 0 and int(tri.max()) < pos.shape[0],
                "triangle indices must be within the vertex range",
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "triangles", tri)

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True, eq=False)
class RasterResult:
    """Rendered color, depth, and coverage of one view.

    Uncovered pixels carry depth ``+inf`` and coverage ``False``; the
    two encodings always agree.
    """

    color: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray

    def __post_init__(self) -> None:
        col = np.asarray(self.color, dtype=np.float32)
        dep = np.asarray(self.depth, dtype=np.float64)
        cov = np.asarray(self.coverage, dtype=bool)
        require(col.ndim == 3 and col.shape[2] == 3, "color must have shape (H, W, 3)")
        require(dep.shape == col.shape[:2], "depth size must match color")
        require(cov.shape == dep.shape, "coverage size must match depth")
        finite = np.isfinite(dep)
        require(bool(np.all(finite == cov)), "coverage must equal depth finiteness")
        require(bool(np.all(dep[cov] > 0)), "covered depths must be positive")
        object.__setattr__(self, "color", col)
        object.__setattr__(self, "depth", dep)
        object.__setattr__(self, "coverage", cov)


@dataclass(frozen=True)
class CameraSampleRanges:
    """Half-ranges for random target camera sampling.

    Translation components are fractions of the median scene depth;
    rotations are per-axis half-ranges in degrees; the field of view
    is drawn uniformly between ``fov_min`` and ``fov_max`` degrees.
    """

    tx: float = 0.10
    ty: float = 0.10
    tz: float = 0.05
    rx: float = 3.0
    ry: float = 3.0
    rz: float = 3.0
    fov_min: float = 45.0
    fov_max: float = 65.0

    def __post_init__(self) -> None:
        for name in ("tx", "ty", "tz", "rx", "ry", "rz"):
            value = getattr(self, name)
            require(np.isfinite(value) and value >= 0, f"{name} must be non-negative")
        require(
            10.0 < self.fov_min <= self.fov_max < 120.0,
            "fov range must satisfy 10 < fov_min <= fov_max < 120",
        )


@dataclass(frozen=True, eq=False)
class CameraSample:
    """A drawn target camera: intrinsics plus pose."""

    intrinsics: Intrinsics
    pose: CameraPose


@dataclass(frozen=True, eq=False)
class StereoPair:
    """A source view with a synthesized, hole-filled target view."""

    source_color: np.ndarray
    source_depth: np.ndarray
    target_color: np.ndarray
    target_depth: np.ndarray
    holes: np.ndarray
    intrinsics: Intrinsics
    pose: CameraPose
    seed: int

    def __post_init__(self) -> None:
        size = self.source_color.shape[:2]
        require(
            self.source_depth.shape == size
            and self.target_color.shape[:2] == size
            and self.target_depth.shape == size
            and self.holes.shape == size,
            "all pair rasters must share dimensions",
        )


def mesh_from_depth(
    image: np.ndarray,
    depth: np.ndarray,
    intrinsics: Intrinsics,
    grad_thresh: float = 0.04,
    valid: np.ndarray | None = None,
) -> TriangleMesh:
    """Lift an RGB-D image into a triangle mesh.

    Every valid pixel becomes a vertex at ``depth * K^-1 [u, v, 1]``;
    each grid cell contributes two triangles.  Triangles containing an
    edge whose endpoint disparities differ by more than ``grad_thresh``
    are dropped, so depth discontinuities stay disconnected instead of
    being bridged by stretched geometry.

    Parameters
    ----------
    image:
        Color of shape ``(H, W, 3)``.
    depth:
        Positive depth map of the same size.
    intrinsics:
        Camera model with matching size.
    grad_thresh:
        Long-edge threshold in disparity units.
    valid:
        Optional boolean map; pixels marked False get no vertex and no
        incident triangles.

    Returns
    -------
    TriangleMesh
        Mesh in the camera frame of the input view.
    """
    img = as_image(image)
    dmap = as_depth(depth)
    require(img.shape[:2] == dmap.shape, "image and depth sizes must match")
    if not isinstance(intrinsics, Intrinsics):
        raise ValidationError("intrinsics must be an Intrinsics instance")
    require(
        intrinsics.width == dmap.shape[1] and intrinsics.height == dmap.shape[0],
        "intrinsics size must match the image",
    )
    require(np.isfinite(grad_thresh) and grad_thresh > 0, "grad_thresh must be positive")
    h, w = dmap.shape
    if valid is None:
        ok = np.ones((h, w), dtype=bool)
    else:
        ok = np.asarray(valid, dtype=bool)
        require(ok.shape == (h, w), "valid mask size must match the image")

    us = np.arange(w, dtype=np.float64)
    vs = np.arange(h, dtype=np.float64)
    xdir = (us[None, :] - intrinsics.cx) / intrinsics.fx
    ydir = (vs[:, None] - intrinsics.cy) / intrinsics.fy
    d64 = dmap.astype(np.float64)
    positions = np.empty((h, w, 3), dtype=np.float64)
    positions[:, :, 0] = d64 * xdir
    positions[:, :, 1] = d64 * ydir
    positions[:, :, 2] = d64

    ids = np.full((h, w), -1, dtype=np.int32)
    ids[ok] = np.arange(int(ok.sum()), dtype=np.int32)

    if h < 2 or w < 2 or not ok.any():
        triangles = np.zeros((0, 3), dtype=np.int32)
    else:
        disp = 1.0 / d64
        i00 = ids[:-1, :-1]
        i10 = ids[:-1, 1:]
        i01 = ids[1:, :-1]
        i11 = ids[1:, 1:]
        d00 = disp[:-1, :-1]
        d10 = disp[:-1, 1:]
        d01 = disp[1:, :-1]
        d11 = disp[1:, 1:]
        top = np.abs(d00 - d10) <= grad_thresh
        bottom = np.abs(d01 - d11) <= grad_thresh
        left = np.abs(d00 - d01) <= grad_thresh
        right = np.abs(d10 - d11) <= grad_thresh
        diag = np.abs(d00 - d11) <= grad_thresh
        ok1 = (i00 >= 0) & (i10 >= 0) & (i11 >= 0) & top & right & diag
        ok2 = (i00 >= 0) & (i11 >= 0) & (i01 >= 0) & diag & bottom & left
        t1 = np.stack([i00[ok1], i10[ok1], i11[ok1]], axis=1)
        t2 = np.stack([i00[ok2], i11[ok2], i01[ok2]], axis=1)
        # interleave cell order: T1 then T2 per cell, row-major cells
        flat1 = np.flatnonzero(ok1.ravel()) * 2
        flat2 = np.flatnonzero(ok2.ravel()) * 2 + 1
        slots = np.concatenate([flat1, flat2])
        tris = np.concatenate([t1, t2], axis=0)
        triangles = tris[np.argsort(slots, kind="stable")].astype(np.int32)

    return TriangleMesh(
        positions=positions[ok],
        colors=img[ok],
        triangles=triangles,
    )


def rasterize(
    mesh: TriangleMesh,
    intrinsics: Intrinsics,
    pose: CameraPose,
    out_size: tuple[int, int],
) -> RasterResult:
    """Render a mesh into the camera at ``pose`` with a z-buffer.

    Vertices are moved into the target camera frame, projected, and
    rasterized with perspective-correct interpolation.  A pixel center
    is covered when strictly inside a triangle, on one of its top or
    left edges, or exactly on a projected vertex; the nearest depth
    wins, with ties kept by the earlier triangle.  Triangles reaching
    behind the near plane are discarded whole rather than clipped.

    Parameters
    ----------
    mesh:
        Mesh in some view's camera frame.
    intrinsics:
        Target camera model.
    pose:
        Pose of the target camera in the mesh's frame.
    out_size:
        Output ``(height, width)``.

    Returns
    -------
    RasterResult
        Color, depth (``+inf`` in holes), and coverage.
    """
    if not isinstance(mesh, TriangleMesh):
        raise ValidationError("mesh must be a TriangleMesh instance")
    if not isinstance(intrinsics, Intrinsics):
        raise ValidationError("intrinsics must be an Intrinsics instance")
    if not isinstance(pose, CameraPose):
        raise ValidationError("pose must be a CameraPose instance")
    out_h, out_w = int(out_size[0]), int(out_size[1])
    require(out_h >= 1 and out_w >= 1, "output size must be positive")

    view = (mesh.positions - pose.translation) @ pose.rotation
    z = view[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = intrinsics.fx * view[:, 0] / z + intrinsics.cx
        py = intrinsics.fy * view[:, 1] / z + intrinsics.cy
    px = _snap(px)
    py = _snap(py)
    color, depth, cover = _kernels.rasterize_triangles(
        px,
        py,
        np.ascontiguousarray(z),
        mesh.colors,
        mesh.triangles,
        NEAR_PLANE,
        out_h,
        out_w,
    )
    return RasterResult(color=color, depth=depth, coverage=cover.astype(bool))


def _snap(coords: np.ndarray) -> np.ndarray:
    """Snap near-integer projected coordinates onto the integer."""
    rounded = np.rint(coords)
    return np.where(np.abs(coords - rounded) <= _SNAP_EPS, rounded, coords)


def sample_camera(
    seed: int,
    ranges: CameraSampleRanges,
    median_depth: float,
    width: int,
    height: int,
) -> CameraSample:
    """Draw a random target camera, deterministically from the seed.

    The field of view is drawn first, then the three translation
    components (scaled by ``median_depth``), then the three Euler
    angles, all uniform within their half-ranges.

    Parameters
    ----------
    seed:
        Seed for the random stream.
    ranges:
        Sampling half-ranges.
    median_depth:
        Scene scale used for the translation draw.
    width, height:
        Target image size in pixels.

    Returns
    -------
    CameraSample
        The drawn intrinsics and pose.
    """
    if not isinstance(ranges, CameraSampleRanges):
        raise ValidationError("ranges must be a CameraSampleRanges instance")
    require(np.isfinite(median_depth) and median_depth > 0, "median_depth must be positive")
    rng = np.random.default_rng(seed)
    fov = float(rng.uniform(ranges.fov_min, ranges.fov_max))
    tx = float(rng.uniform(-ranges.tx, ranges.tx)) * median_depth
    ty = float(rng.uniform(-ranges.ty, ranges.ty)) * median_depth
    tz = float(rng.uniform(-ranges.tz, ranges.tz)) * median_depth
    rx = float(rng.uniform(-ranges.rx, ranges.rx))
    ry = float(rng.uniform(-ranges.ry, ranges.ry))
    rz = float(rng.uniform(-ranges.rz, ranges.rz))
    intrinsics = fov_intrinsics(fov, width, height)
    pose = CameraPose(rotation=rotation_xyz(rx, ry, rz), translation=np.array([tx, ty, tz]))
    return CameraSample(intrinsics=intrinsics, pose=pose)


def warp_back(
    raster: RasterResult,
    intrinsics: Intrinsics,
    pose: CameraPose,
    grad_thresh: float = 0.04,
) -> RasterResult:
    """Warp a rendered target view back into the source camera.

    Only covered target pixels are triangulated, so forward holes do
    not invent geometry; the mesh is rasterized with the inverse pose.
    Pixels of the source view not seen from the target come back as
    holes.

    Parameters
    ----------
    raster:
        Target-view raster from :func:`rasterize`.
    intrinsics:
        Camera model shared by both views.
    pose:
        The forward source-to-target pose.
    grad_thresh:
        Long-edge threshold for the target-side triangulation.

    Returns
    -------
    RasterResult
        The re-rendered source view.
    """
    if not isinstance(raster, RasterResult):
        raise ValidationError("raster must be a RasterResult instance")
    safe_depth = np.where(raster.coverage, raster.depth, 1.0).astype(np.float32)
    mesh = mesh_from_depth(
        raster.color,
        safe_depth,
        intrinsics,
        grad_thresh,
        valid=raster.coverage,
    )
    h, w = raster.depth.shape
    return rasterize(mesh, intrinsics, pose.inverse(), (h, w))


def fill_holes(
    color: np.ndarray,
    depth: np.ndarray,
    holes: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Fill hole pixels with diffused background content.

    Each connected hole region is filled by the masked diffusion
    solver; boundary pixels whose disparity falls in the nearer half
    of that region's boundary disparity range are excluded, so filled
    content extends the background rather than smearing the foreground
    object that caused the disocclusion.  Depth is filled with the
    same sources.

    Parameters
    ----------
    color:
        Color raster of shape ``(H, W, 3)``.
    depth:
        Depth raster; values inside holes may be the ``+inf`` sentinel.
    holes:
        Boolean hole mask.

    Returns
    -------
    tuple
        ``(filled_color, filled_depth)`` as float32 arrays without
        sentinel values.  A fully holed input fills color with zeros
        and depth with ones.
    """
    col = np.asarray(color, dtype=np.float32)
    dep = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(holes, dtype=bool)
    require(col.ndim == 3 and col.shape[2] == 3, "color must have shape (H, W, 3)")
    require(dep.shape == col.shape[:2] and mask.shape == dep.shape, "raster sizes must match")
    if not mask.any():
        return col.copy(), dep.astype(np.float32)
    if mask.all():
        return np.zeros_like(col), np.ones(dep.shape, dtype=np.float32)

    disp = np.zeros(dep.shape, dtype=np.float64)
    known = ~mask
    disp[known] = 1.0 / dep[known]
    # Color and depth share masks and sources, so they diffuse as one
    # four-channel image (channels never mix inside the solver).
    joined = np.empty(col.shape[:2] + (4,), dtype=np.float32)
    joined[:, :, :3] = col
    joined[:, :, 3] = np.where(known, dep, 1.0)

    labels, count = label(mask)
    for region_id in range(1, count + 1):
        region = labels == region_id
        boundary = binary_dilation(region) & known
        if not boundary.any():
            continue
        bdisp = disp[boundary]
        mid = (bdisp.min() + bdisp.max()) / 2.0
        allowed = boundary & (disp <= mid)
        joined = diffusion_fill(joined, region, allowed)
    return joined[:, :, :3].copy(), joined[:, :, 3].copy()


def generate_pair(
    image: np.ndarray,
    depth: np.ndarray,
    seed: int,
    ranges: CameraSampleRanges | None = None,
    grad_thresh: float = 0.04,
) -> StereoPair:
    """Create one stereo pair from a single RGB-D image.

    Draws a target camera, forward-warps the image there through the
    depth mesh, records which pixels the target cannot see, and fills
    those holes.  The result is a fully reproducible function of the
    inputs and the seed.

    Parameters
    ----------
    image:
        Source color of shape ``(H, W, 3)``.
    depth:
        Positive source depth of the same size.
    seed:
        Seed for the camera draw.
    ranges:
        Sampling half-ranges; defaults to ``CameraSampleRanges()``.
    grad_thresh:
        Long-edge threshold for the depth triangulation.

    Returns
    -------
    StereoPair
        Source and filled target views with the hole mask.
    """
    img = as_image(image)
    dmap = as_depth(depth)
    require(img.shape[:2] == dmap.shape, "image and depth sizes must match")
    require(img.shape[2] == 3, "image must have three channels")
    if ranges is None:
        ranges = CameraSampleRanges()
    h, w = dmap.shape
    sample = sample_camera(seed, ranges, float(np.median(dmap)), w, h)
    mesh = mesh_from_depth(img, dmap, sample.intrinsics, grad_thresh)
    raster = rasterize(mesh, sample.intrinsics, sample.pose, (h, w))
    holes = ~raster.coverage
    filled_color, filled_depth = fill_holes(raster.color, raster.depth, holes)
    return StereoPair(
        source_color=img,
        source_depth=dmap,
        target_color=filled_color,
        target_depth=filled_depth,
        holes=holes,
        intrinsics=sample.intrinsics,
        pose=sample.pose,
        seed=int(seed),
    )
