"""Multiplane image representation and rendering.

An MPI is an ordered stack of fronto-parallel RGB + density planes in the
source camera frame, nearest first, at strictly increasing depths. Rendering
to a novel view warps every plane by its induced homography (bilinear, zero
padded) and over-composites front to back.

Density converts to per-plane transparency through

    alpha_i(u, v) = exp(-delta_i(u, v) * sigma_i(u, v))

where delta_i(u, v) is the distance between the unprojections of (u, v) onto
planes i and i+1 (the last plane reuses the previous spacing; a single-plane
stack uses delta = d_1). Note the direction of this map: sigma = 0 gives a
fully opaque plane and large sigma gives a transparent one, the reverse of
the common alpha = 1 - exp(-delta * sigma) convention. Both conversion
functions here use the same map, so round trips are consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import CameraPose, Intrinsics, plane_homography
from .validate import ValidationError, as_image, require

__all__ = [
    "MpiPlane",
    "Mpi",
    "CompositeResult",
    "RenderResult",
    "delta_maps",
    "sigma_to_alpha",
    "alpha_to_sigma",
    "warp_plane",
    "composite",
    "render_view",
]

# Alpha values below this are treated as fully transparent when inverting the
# exponential; keeps densities finite.
ALPHA_FLOOR = 1e-6

# Composited weight below which the rendered depth falls back to the farthest
# plane instead of normalizing a near-empty expectation.
WEIGHT_FLOOR = 1e-4


@dataclass(eq=False)
class MpiPlane:
    """One fronto-parallel plane: color (H, W, 3) and density (H, W)."""

    color: np.ndarray
    density: np.ndarray

    def __post_init__(self) -> None:
        self.color = as_image(self.color, "plane color")
        den = np.asarray(self.density)
        require(
            den.shape == self.color.shape[:2],
            f"plane density shape {den.shape} does not match color {self.color.shape[:2]}",
        )
        require(np.issubdtype(den.dtype, np.floating), "plane density must be float")
        den = np.ascontiguousarray(den, dtype=np.float32)
        require(bool(np.isfinite(den).all()), "plane density must be finite")
        require(float(den.min()) >= 0.0, "plane density must be >= 0")
        self.density = den


@dataclass(eq=False)
class Mpi:
    """Plane stack, nearest first, plus the camera it was built in."""

    planes: list
    depths: np.ndarray
    intrinsics: Intrinsics
    _layers: np.ndarray | None = field(default=None, init=False, repr=False)
    _alphas: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        require(len(self.planes) >= 1, "an MPI needs at least one plane")
        depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        require(
            depths.shape[0] == len(self.planes),
            f"{depths.shape[0]} depths for {len(self.planes)} planes",
        )
        require(bool(np.isfinite(depths).all()), "plane depths must be finite")
        require(float(depths[0]) > 0.0, "plane depths must be > 0")
        require(bool(np.all(np.diff(depths) > 0.0)), "plane depths must strictly increase")
        shape = self.planes[0].color.shape[:2]
        for p in self.planes:
            require(p.color.shape[:2] == shape, "all planes must share one raster size")
        require(
            shape == (self.intrinsics.height, self.intrinsics.width),
            f"intrinsics raster {self.intrinsics.width}x{self.intrinsics.height}"
            f" does not match planes {shape[1]}x{shape[0]}",
        )
        self.depths = depths

    @property
    def n_planes(self) -> int:
        return len(self.planes)

    @property
    def height(self) -> int:
        return self.planes[0].color.shape[0]

    @property
    def width(self) -> int:
        return self.planes[0].color.shape[1]

    def alphas(self) -> np.ndarray:
        """Per-plane transparency maps, (N, H, W) float32, cached."""
        if self._alphas is None:
            density = np.stack([p.density for p in self.planes])
            self._alphas = sigma_to_alpha(density, self.depths, self.intrinsics)
        return self._alphas

    def layers(self) -> np.ndarray:
        """Packed (N, H, W, 4) float32 [r, g, b, alpha] stack, cached."""
        if self._layers is None:
            n = self.n_planes
            out = np.empty((n, self.height, self.width, 4), dtype=np.float32)
            for i, p in enumerate(self.planes):
                out[i, :, :, :3] = p.color
            out[:, :, :, 3] = self.alphas()
            self._layers = out
        return self._layers


@dataclass(eq=False)
class CompositeResult:
    color: np.ndarray  # (H, W, 3) float32
    weightsum: np.ndarray  # (H, W) float32
    depth_raw: np.ndarray | None = None  # (H, W) float64, unnormalized


@dataclass(eq=False)
class RenderResult:
    color: np.ndarray  # (H, W, 3) float32
    depth: np.ndarray  # (H, W) float32
    weightsum: np.ndarray  # (H, W) float32


def _delta_factors(depths: np.ndarray, intrinsics: Intrinsics):
    """delta_i(u, v) factored as gaps[i] * ray[v, u].

    For N >= 2 the gap is the forward depth difference with the last value
    repeated, and ray is the length of the unprojected direction
    K^-1 [u, v, 1] (so delta is the distance between consecutive plane
    unprojections of the pixel). A single-plane stack uses the constant d_1.
    """
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    h, w = intrinsics.height, intrinsics.width
    if depths.shape[0] == 1:
        return depths.copy(), np.ones((h, w), dtype=np.float64)
    gaps = np.empty_like(depths)
    gaps[:-1] = np.diff(depths)
    gaps[-1] = gaps[-2]
    u = (np.arange(w, dtype=np.float64) - intrinsics.cx) / intrinsics.fx
    v = (np.arange(h, dtype=np.float64) - intrinsics.cy) / intrinsics.fy
    ray = np.sqrt(u[None, :] ** 2 + v[:, None] ** 2 + 1.0)
    return gaps, ray


def delta_maps(depths: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """Full (N, H, W) float64 plane spacing maps (mostly for tests)."""
    gaps, ray = _delta_factors(depths, intrinsics)
    return gaps[:, None, None] * ray[None, :, :]


def sigma_to_alpha(density: np.ndarray, depths: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """Per-plane alpha = exp(-sigma * delta); (N, H, W) float32 in (0, 1]."""
    density = np.ascontiguousarray(density, dtype=np.float32)
    require(density.ndim == 3, f"density must be (N, H, W), got {density.shape}")
    gaps, ray = _delta_factors(depths, intrinsics)
    require(density.shape[0] == gaps.shape[0], "one density map per plane required")
    require(
        density.shape[1:] == ray.shape,
        f"density raster {density.shape[1:]} does not match intrinsics {ray.shape}",
    )
    return _kernels.alpha_from_sigma(density, gaps, ray)


def alpha_to_sigma(alphas: np.ndarray, depths: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """Invert the transparency map; alphas are floored at 1e-6 first."""
    alphas = np.asarray(alphas, dtype=np.float64)
    require(alphas.ndim == 3, f"alphas must be (N, H, W), got {alphas.shape}")
    require(float(alphas.max()) <= 1.0 + 1e-6, "alpha must be <= 1")
    gaps, ray = _delta_factors(depths, intrinsics)
    require(alphas.shape[0] == gaps.shape[0], "one alpha map per plane required")
    out = np.empty(alphas.shape, dtype=np.float32)
    for i in range(alphas.shape[0]):
        a = np.clip(alphas[i], ALPHA_FLOOR, 1.0)
        out[i] = -np.log(a) / (gaps[i] * ray)
    return np.maximum(out, 0.0)


def warp_plane(raster: np.ndarray, homography: np.ndarray, out_size=None) -> np.ndarray:
    """Backward-warp an (H, W, C) raster by a target->source homography.

    Samples outside the source read as zero (color and alpha alike), so
    content fades out within one pixel of the border. out_size is (height,
    width) of the result, defaulting to the input size.
    """
    raster = np.asarray(raster)
    require(raster.ndim == 3, f"raster must be (H, W, C), got {raster.shape}")
    require(np.issubdtype(raster.dtype, np.floating), "raster must be float")
    hom = np.ascontiguousarray(homography, dtype=np.float64)
    require(hom.shape == (3, 3), f"homography must be 3x3, got {hom.shape}")
    require(bool(np.isfinite(hom).all()), "homography must be finite")
    if out_size is None:
        out_h, out_w = raster.shape[:2]
    else:
        out_h, out_w = int(out_size[0]), int(out_size[1])
    src = np.ascontiguousarray(raster, dtype=np.float32)
    return _kernels.warp_image(src, hom, out_h, out_w)


def composite(colors: np.ndarray, alphas: np.ndarray, depths=None) -> CompositeResult:
    """Over-composite pre-warped planes, front (index 0) to back.

    colors: (N, H, W, 3), alphas: (N, H, W) in [0, 1]. Accumulation runs in
    float64 per pixel; the weight sum lands in [0, 1]. When plane depths are
    given the unnormalized depth expectation is returned as well.
    """
    colors = np.ascontiguousarray(colors, dtype=np.float32)
    alphas_arr = np.ascontiguousarray(alphas, dtype=np.float32)
    require(colors.ndim == 4 and colors.shape[3] == 3, f"colors must be (N, H, W, 3), got {colors.shape}")
    require(alphas_arr.shape == colors.shape[:3], f"alphas {alphas_arr.shape} do not match colors {colors.shape[:3]}")
    require(colors.shape[0] >= 1, "need at least one plane")
    amin, amax = float(alphas_arr.min()), float(alphas_arr.max())
    require(amin >= -1e-6 and amax <= 1.0 + 1e-6, f"alpha must lie in [0, 1], got [{amin:g}, {amax:g}]")
    alphas_arr = np.clip(alphas_arr, 0.0, 1.0)
    if depths is None:
        d = np.zeros(colors.shape[0], dtype=np.float64)
    else:
        d = np.ascontiguousarray(depths, dtype=np.float64).reshape(-1)
        require(d.shape[0] == colors.shape[0], "one depth per plane required")
    color, weight, depth_raw = _kernels.composite_over(colors, alphas_arr, d)
    return CompositeResult(color=color, weightsum=weight, depth_raw=None if depths is None else depth_raw)


def render_view(mpi: Mpi, pose: CameraPose, target: Intrinsics | None = None) -> RenderResult:
    """Render the MPI into the camera described by (pose, target).

    Every plane is warped by its induced homography and the stack is
    over-composited front to back (one fused pass; identical arithmetic to
    warp_plane + composite). The depth output is the weight-normalized
    expectation over plane depths, falling back to the farthest plane where
    the composited weight is below 1e-4. Results are independent of the
    thread count.
    """
    if target is None:
        target = mpi.intrinsics
    n = mpi.n_planes
    homs = np.empty((n, 3, 3), dtype=np.float64)
    for i in range(n):
        homs[i] = plane_homography(mpi.intrinsics, target, pose, float(mpi.depths[i]))
    color, weight, depth_raw = _kernels.render_planes(
        mpi.layers(), homs, mpi.depths, target.height, target.width
    )
    weight64 = weight.astype(np.float64)
    depth = np.full(weight.shape, mpi.depths[-1], dtype=np.float64)
    good = weight64 > WEIGHT_FLOOR
    np.divide(depth_raw, weight64, out=depth, where=good)
    return RenderResult(color=color, depth=depth.astype(np.float32), weightsum=weight)
