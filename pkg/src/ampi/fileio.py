"""Readers and writers for the on-disk formats the command line uses.

Color rasters travel as 8-bit PNG, depth as PFM (native float) or 16-bit
PNG with an explicit integer-to-unit scale, plane stacks as a little-endian
binary container, and camera paths plus pair metadata as structured text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraPose, Intrinsics
from .mpi import Mpi, MpiPlane
from .validate import ValidationError, as_depth, as_image, require
from .warpback import StereoPair

__all__ = [
    "CameraPathEntry",
    "read_camera_path",
    "read_color_png",
    "read_depth",
    "read_depth_png16",
    "read_mask_png",
    "read_mpi",
    "read_pair",
    "read_pfm",
    "write_color_png",
    "write_mask_png",
    "write_mpi",
    "write_pair",
    "write_pfm",
]

_MAGIC = b"AMPI"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIffff")


def write_color_png(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) or (H, W, 1) float image in [0, 1] as 8-bit PNG."""
    image = as_image(image, "image")
    data = np.rint(image * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def read_color_png(path) -> np.ndarray:
    """Read a PNG as (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float32)
    return data / 255.0


def write_mask_png(path, mask: np.ndarray) -> None:
    """Write a boolean (H, W) mask as a 0/255 grayscale PNG."""
    mask = np.asarray(mask)
    require(mask.ndim == 2 and mask.dtype == np.bool_, "mask: expected a 2-D bool array")
    Image.fromarray(np.where(mask, np.uint8(255), np.uint8(0)), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as img:
        data = np.asarray(img.convert("L"))
    return data > 127


def write_pfm(path, data: np.ndarray) -> None:
    """Write an (H, W) float map as grayscale PFM (bottom-up, little-endian)."""
    data = np.asarray(data)
    require(data.ndim == 2, f"pfm: expected shape (H, W), got {data.shape}")
    require(np.issubdtype(data.dtype, np.floating), "pfm: expected float data")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def _pfm_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(raw) and raw[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(raw) and not raw[pos : pos + 1].isspace():
        pos += 1
    return raw[start:pos], pos


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM as (H, W) float32, honoring the scale's sign."""
    with open(path, "rb") as f:
        raw = f.read()
    # Tokenize by hand: exactly one whitespace byte separates the scale from
    # the raster, and raster bytes may themselves look like whitespace.
    kind, pos = _pfm_token(raw, 0)
    if kind == b"PF":
        raise ValidationError("pfm: color (PF) maps are not supported, expected Pf")
    require(kind == b"Pf", f"pfm: bad magic {kind!r}")
    wtok, pos = _pfm_token(raw, pos)
    htok, pos = _pfm_token(raw, pos)
    stok, pos = _pfm_token(raw, pos)
    try:
        w, h = int(wtok), int(htok)
        scale = float(stok)
    except ValueError as exc:
        raise ValidationError(f"pfm: malformed header: {exc}") from None
    require(w > 0 and h > 0 and scale != 0.0, "pfm: malformed header")
    payload = raw[pos + 1 :]
    require(len(payload) == w * h * 4, "pfm: payload does not match dimensions")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def read_depth_png16(path, scale: float) -> np.ndarray:
    """Read a 16-bit grayscale PNG depth map, mapping integers to units.

    Parameters
    ----------
    path:
        PNG whose samples are non-negative integers.
    scale:
        Scene units per integer step; must be positive.

    Returns
    -------
    numpy.ndarray
        (H, W) float32 depth.  Zero samples are rejected because depth
        must stay strictly positive.
    """
    require(scale > 0.0, "depth scale must be > 0")
    with Image.open(path) as img:
        require(img.mode in ("I", "I;16", "I;16B", "L"), f"depth png: unsupported mode {img.mode}")
        data = np.asarray(img.convert("I"), dtype=np.int64)
    require(bool((data > 0).all()), "depth png: zero or negative samples have no depth")
    return as_depth(data.astype(np.float32) * np.float32(scale))


def read_depth(path, scale: float | None = None) -> np.ndarray:
    """Read depth from PFM (preferred) or 16-bit PNG (requires ``scale``)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return as_depth(read_pfm(path))
    if suffix == ".png":
        require(scale is not None, "16-bit png depth requires an explicit scale")
        return read_depth_png16(path, scale)
    raise ValidationError(f"unsupported depth format {suffix!r}, expected .pfm or .png")


def write_mpi(path, mpi: Mpi) -> None:
    """Serialize a plane stack to the binary container format."""
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        mpi.width,
        mpi.height,
        mpi.n_planes,
        mpi.intrinsics.fx,
        mpi.intrinsics.fy,
        mpi.intrinsics.cx,
        mpi.intrinsics.cy,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(mpi.depths.astype("<f4").tobytes())
        for plane in mpi.planes:
            f.write(plane.color.astype("<f4").tobytes())
            f.write(plane.density.astype("<f4").tobytes())


def read_mpi(path) -> Mpi:
    """Read a plane stack, validating magic, version, order, and length."""
    with open(path, "rb") as f:
        raw = f.read()
    require(len(raw) >= _HEADER.size, "container: truncated header")
    magic, version, width, height, count, fx, fy, cx, cy = _HEADER.unpack_from(raw)
    require(magic == _MAGIC, f"container: bad magic {magic!r}")
    require(version == _VERSION, f"container: unsupported version {version}")
    require(width > 0 and height > 0 and count > 0, "container: empty dimensions")
    pixels = width * height
    expected = _HEADER.size + 4 * count + 16 * pixels * count
    require(
        len(raw) == expected,
        f"container: payload is {len(raw)} bytes, header implies {expected}",
    )
    offset = _HEADER.size
    depths = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float64)
    require(bool(np.all(np.diff(depths) > 0.0)), "container: depths must strictly increase")
    offset += 4 * count
    planes = []
    for _ in range(count):
        color = np.frombuffer(raw, dtype="<f4", count=pixels * 3, offset=offset)
        offset += pixels * 12
        density = np.frombuffer(raw, dtype="<f4", count=pixels, offset=offset)
        offset += pixels * 4
        planes.append(
            MpiPlane(
                color=color.reshape(height, width, 3).copy(),
                density=density.reshape(height, width).copy(),
            )
        )
    intrinsics = Intrinsics(
        fx=float(fx), fy=float(fy), cx=float(cx), cy=float(cy), width=width, height=height
    )
    return Mpi(planes=planes, depths=depths, intrinsics=intrinsics)


@dataclass(frozen=True, eq=False)
class CameraPathEntry:
    """One frame of a camera path: a pose and an optional field of view."""

    pose: CameraPose
    fov: float | None = None


def read_camera_path(path) -> list[CameraPathEntry]:
    """Parse a camera path file.

    Each non-comment line holds 12 or 13 floats: a row-major 3x3 rotation,
    a translation, and optionally a field-of-view override in degrees.
    Rotations are validated for orthonormality on load.
    """
    entries = []
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                values = [float(tok) for tok in text.split()]
            except ValueError:
                raise ValidationError(f"camera path line {lineno}: non-numeric token") from None
            require(
                len(values) in (12, 13),
                f"camera path line {lineno}: expected 12 or 13 values, got {len(values)}",
            )
            pose = CameraPose(
                rotation=np.array(values[:9], dtype=np.float64).reshape(3, 3),
                translation=np.array(values[9:12], dtype=np.float64),
            )
            fov = values[12] if len(values) == 13 else None
            entries.append(CameraPathEntry(pose=pose, fov=fov))
    return entries


def _format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def write_pair(directory, pair: StereoPair) -> None:
    """Write one stereo pair as a directory of rasters plus metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_color_png(directory / "source_color.png", pair.source_color)
    write_color_png(directory / "target_color.png", pair.target_color)
    write_pfm(directory / "source_depth.pfm", pair.source_depth)
    write_pfm(directory / "target_depth.pfm", pair.target_depth)
    write_mask_png(directory / "holes.png", pair.holes)
    intr = pair.intrinsics
    meta = "\n".join(
        [
            f"width: {intr.width}",
            f"height: {intr.height}",
            f"intrinsics: {_format_floats([intr.fx, intr.fy, intr.cx, intr.cy])}",
            f"rotation: {_format_floats(pair.pose.rotation)}",
            f"translation: {_format_floats(pair.pose.translation)}",
            f"seed: {pair.seed}",
        ]
    )
    (directory / "meta.txt").write_text(meta + "\n", encoding="ascii")


def read_pair(directory) -> StereoPair:
    """Read a stereo pair directory written by :func:`write_pair`."""
    directory = Path(directory)
    meta = {}
    for line in (directory / "meta.txt").read_text(encoding="ascii").splitlines():
        key, sep, value = line.partition(": ")
        require(bool(sep), f"pair metadata: malformed line {line!r}")
        meta[key] = value
    try:
        fx, fy, cx, cy = (float(v) for v in meta["intrinsics"].split())
        intrinsics = Intrinsics(
            fx=fx, fy=fy, cx=cx, cy=cy, width=int(meta["width"]), height=int(meta["height"])
        )
        pose = CameraPose(
            rotation=np.array([float(v) for v in meta["rotation"].split()]).reshape(3, 3),
            translation=np.array([float(v) for v in meta["translation"].split()]),
        )
        seed = int(meta["seed"])
    except KeyError as exc:
        raise ValidationError(f"pair metadata: missing key {exc}") from None
    return StereoPair(
        source_color=read_color_png(directory / "source_color.png"),
        source_depth=read_pfm(directory / "source_depth.pfm"),
        target_color=read_color_png(directory / "target_color.png"),
        target_depth=read_pfm(directory / "target_depth.pfm"),
        holes=read_mask_png(directory / "holes.png"),
        intrinsics=intrinsics,
        pose=pose,
        seed=seed,
    )
