"""Pinhole camera model and plane-induced homographies.

Conventions used everywhere in this package:

* pixel (u, v) addresses the center of column u in row v, and rasters are
  indexed ``arr[v, u]``; the pixel grid spans u in [0, W-1], v in [0, H-1]
* camera frames are right handed with +z pointing through the image plane
* a pose (R, t) maps target-frame coordinates into the source frame,
  ``X_src = R @ X_tgt + t``; the same object drives both plane warping
  (planes live in the source frame) and mesh reprojection

``plane_homography`` returns the 3x3 map H with ``[u_s, v_s, 1] ~ H @ [u_t,
v_t, 1]`` for the fronto-parallel source plane at depth d. Its correctness is
pinned by the lift / intersect / project construction (see the derivation in
the function body), not by any printed sign convention, and the test suite
checks it against exactly that construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validate import ValidationError, require

__all__ = [
    "Intrinsics",
    "CameraPose",
    "plane_homography",
    "fov_intrinsics",
    "rotation_xyz",
]


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics. Focal lengths in pixels, principal point (cx, cy)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        require(self.width > 0 and self.height > 0, "intrinsics: raster size must be positive")
        require(self.fx > 0 and self.fy > 0, "intrinsics: focal lengths must be > 0")
        require(0 <= self.cx < self.width, "intrinsics: cx must lie in [0, width)")
        require(0 <= self.cy < self.height, "intrinsics: cy must lie in [0, height)")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same field of view at a different raster size."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=width,
            height=height,
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Rigid pose (R, t) with X_src = R @ X_tgt + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        require(rot.shape == (3, 3), f"pose: rotation must be 3x3, got {rot.shape}")
        require(tra.shape == (3,), f"pose: translation must have 3 entries, got {tra.shape}")
        require(bool(np.isfinite(rot).all()) and bool(np.isfinite(tra).all()), "pose: values must be finite")
        err = float(np.abs(rot @ rot.T - np.eye(3)).max())
        require(err <= 1e-6, f"pose: rotation is not orthonormal (|R R^T - I| = {err:.3e})")
        det = float(np.linalg.det(rot))
        require(abs(det - 1.0) <= 1e-6, f"pose: rotation determinant must be +1, got {det:.8f}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "CameraPose":
        rt = self.rotation.T
        return CameraPose(rt, -rt @ self.translation)

    def is_identity(self, tol: float = 0.0) -> bool:
        return (
            float(np.abs(self.rotation - np.eye(3)).max()) <= tol
            and float(np.abs(self.translation).max()) <= tol
        )


def plane_homography(
    source: Intrinsics, target: Intrinsics, pose: CameraPose, depth: float
) -> np.ndarray:
    """Homography mapping target pixels onto the source plane at ``depth``.

    Derivation: lift the target pixel to a ray r = K_t^-1 [u, v, 1], move it
    into the source frame X(s) = s R r + t, intersect with the plane z = d
    (s* = (d - t_z) / (R r)_z), and project with K_s. Clearing the scalar
    denominator leaves

        H = K_s ((d - t_z) R + t (n^T R)) K_t^-1,   n = [0, 0, 1]^T

    which is finite for every pose; pixels whose ray runs parallel to the
    plane land at infinity and simply sample out of bounds.
    """
    require(depth > 0, f"plane depth must be > 0, got {depth}")
    rot = pose.rotation
    t = pose.translation
    mid = (depth - t[2]) * rot + np.outer(t, rot[2])
    return source.matrix() @ mid @ target.inverse_matrix()


def fov_intrinsics(fov_deg: float, width: int, height: int) -> Intrinsics:
    """Square-pixel intrinsics from a horizontal field of view in degrees.

    The principal point sits at the raster center ((W-1)/2, (H-1)/2) under
    the pixel-center convention at the top of this module.
    """
    require(10.0 < fov_deg < 120.0, f"fov must lie in (10, 120) degrees, got {fov_deg}")
    f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Intrinsics(
        fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, width=width, height=height
    )


def rotation_xyz(rx_deg: float, ry_deg: float, rz_deg: float) -> np.ndarray:
    """Rotation matrix R = Rx @ Ry @ Rz from per-axis angles in degrees."""
    ax, ay, az = (math.radians(a) for a in (rx_deg, ry_deg, rz_deg))
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=np.float64)
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=np.float64)
    return rot_x @ rot_y @ rot_z
