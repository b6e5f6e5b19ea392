"""Single-view novel-view synthesis with adaptive multiplane images.

The pipeline: pick plane depths for a scene (``init_planes`` /
``adjust_planes``), expand an RGB-D image into a plane stack
(``build_mpi``), and render novel views by homography warping plus
front-to-back compositing (``render_view``).  ``generate_pair`` creates
warp-back stereo training pairs from single images, ``metrics`` scores
renders, and ``cli`` binds everything to files on disk.

Transparency convention: planes carry density, and alpha falls off as
``exp(-delta * density)``, so zero density means fully opaque.
"""

from .build import BuildParams, MaskTriple, build_mpi, derive_masks, occlusion_regions
from .camera import (
    CameraPose,
    Intrinsics,
    fov_intrinsics,
    plane_homography,
    rotation_xyz,
)
from .fill import diffusion_fill
from .metrics import MetricReport, crop_border, evaluate, psnr, ssim
from .mpi import (
    Mpi,
    MpiPlane,
    RenderResult,
    alpha_to_sigma,
    composite,
    render_view,
    sigma_to_alpha,
    warp_plane,
)
from .planes import AdjustParams, PlaneLosses, adjust_planes, init_planes, plane_losses, soft_assign
from .validate import ValidationError
from .warpback import (
    CameraSampleRanges,
    StereoPair,
    fill_holes,
    generate_pair,
    mesh_from_depth,
    rasterize,
    sample_camera,
    warp_back,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustParams",
    "BuildParams",
    "CameraPose",
    "CameraSampleRanges",
    "Intrinsics",
    "MaskTriple",
    "MetricReport",
    "Mpi",
    "MpiPlane",
    "PlaneLosses",
    "RenderResult",
    "StereoPair",
    "ValidationError",
    "__version__",
    "adjust_planes",
    "alpha_to_sigma",
    "build_mpi",
    "composite",
    "crop_border",
    "derive_masks",
    "diffusion_fill",
    "evaluate",
    "fill_holes",
    "fov_intrinsics",
    "generate_pair",
    "init_planes",
    "mesh_from_depth",
    "occlusion_regions",
    "plane_homography",
    "plane_losses",
    "psnr",
    "rasterize",
    "render_view",
    "rotation_xyz",
    "sample_camera",
    "sigma_to_alpha",
    "soft_assign",
    "ssim",
    "warp_back",
    "warp_plane",
]
