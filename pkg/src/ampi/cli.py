"""Command-line surface: build, render, genpairs, eval, and inspect.

Exit codes are stable: 0 on success, 1 on I/O failures, 2 when an input
breaks a documented invariant.  All commands are deterministic given their
flags and seeds.  The AMPI_THREADS environment variable (positive integer,
0 or unset = auto) caps kernel parallelism.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from ._kernels import threads_from_env
from .build import BuildParams, _raw_tau, build_mpi
from .camera import fov_intrinsics
from .fileio import (
    read_camera_path,
    read_color_png,
    read_depth,
    read_mpi,
    write_color_png,
    write_mpi,
    write_pair,
)
from .metrics import MetricReport, evaluate
from .mpi import render_view
from .planes import AdjustParams, adjust_planes, init_planes, plane_losses, soft_assign
from .validate import ValidationError, require
from .warpback import CameraSampleRanges, generate_pair

__all__ = ["main"]


def _losses_line(label, depth, planes, tau):
    feature = soft_assign(depth, planes, _raw_tau(depth, planes, tau))
    losses = plane_losses(depth, planes, feature)
    return f"{label} assign={losses.assign:.6f} rank={losses.rank:.6f}"


def cmd_build(args) -> None:
    require(args.planes >= 1, "plane count must be >= 1")
    image = read_color_png(args.image)
    depth = read_depth(args.depth, args.depth_scale)
    require(
        depth.shape == image.shape[:2],
        f"depth {depth.shape} does not match image {image.shape[:2]}",
    )
    h, w = depth.shape
    intrinsics = fov_intrinsics(args.fov, w, h)
    d_min = float(depth.min())
    d_max = float(depth.max())
    planes = init_planes(args.planes, d_min, d_max)
    print(_losses_line("init", depth, planes, args.tau))
    if not args.no_adjust:
        planes = adjust_planes(depth, args.planes)
    print(_losses_line("final", depth, planes, args.tau))
    params = BuildParams(tau=args.tau, hidden_band=args.band, grad_thresh=args.grad_thresh)
    mpi = build_mpi(image, depth, planes, intrinsics, params)
    write_mpi(args.out, mpi)
    print(f"wrote {args.out} ({mpi.n_planes} planes, {w}x{h})")


def _parse_size(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)x(\d+)", text)
    require(match is not None, f"size must look like WIDTHxHEIGHT, got {text!r}")
    w, h = int(match.group(1)), int(match.group(2))
    require(w > 0 and h > 0, "size must be positive")
    return w, h


def cmd_render(args) -> None:
    mpi = read_mpi(args.mpi)
    entries = read_camera_path(args.path)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.size is None:
        w, h = mpi.width, mpi.height
    else:
        w, h = _parse_size(args.size)
    for index, entry in enumerate(entries):
        if entry.fov is not None:
            target = fov_intrinsics(entry.fov, w, h)
        else:
            target = mpi.intrinsics.scaled(w, h)
        result = render_view(mpi, entry.pose, target)
        frame = np.clip(result.color, 0.0, 1.0)
        write_color_png(out_dir / f"frame_{index:05d}.png", frame)
    print(f"wrote {len(entries)} frames to {out_dir}")


def cmd_genpairs(args) -> None:
    require(
        len(args.image) == len(args.depth),
        f"{len(args.image)} images but {len(args.depth)} depth maps",
    )
    ranges = CameraSampleRanges(
        tx=args.tx,
        ty=args.ty,
        tz=args.tz,
        rx=args.rx,
        ry=args.ry,
        rz=args.rz,
        fov_min=args.fov_min,
        fov_max=args.fov_max,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    index = 0
    for image_path, depth_path in zip(args.image, args.depth):
        image = read_color_png(image_path)
        depth = read_depth(depth_path, args.depth_scale)
        require(
            depth.shape == image.shape[:2],
            f"depth {depth.shape} does not match image {image.shape[:2]} for {image_path}",
        )
        for _ in range(args.count):
            seed = args.seed + index
            pair = generate_pair(image, depth, seed, ranges)
            name = f"pair_{index:05d}"
            write_pair(out_dir / name, pair)
            manifest.append(f"{name} {seed}")
            index += 1
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="ascii")
    print(f"wrote {index} pairs to {out_dir}")


def _mean_report(reports, crop: float) -> MetricReport:
    return MetricReport(
        psnr=float(np.mean([r.psnr for r in reports])),
        ssim=float(np.mean([r.ssim for r in reports])),
        l1=float(np.mean([r.l1 for r in reports])),
        crop_fraction=crop,
    )


def cmd_eval(args) -> None:
    pred = Path(args.pred)
    ref = Path(args.gt)
    if pred.is_dir() != ref.is_dir():
        raise ValidationError("pred and gt must both be files or both be directories")
    if not pred.is_dir():
        report = evaluate(read_color_png(pred), read_color_png(ref), args.crop)
        print(report.as_text())
        return
    pred_names = sorted(p.name for p in pred.glob("*.png"))
    ref_names = sorted(p.name for p in ref.glob("*.png"))
    require(
        pred_names == ref_names,
        "prediction and reference directories must hold the same image names",
    )
    require(len(pred_names) > 0, "no images to evaluate")
    reports = []
    for name in pred_names:
        report = evaluate(read_color_png(pred / name), read_color_png(ref / name), args.crop)
        reports.append(report)
        print(f"[{name}]")
        print(report.as_text())
        print()
    print("[mean]")
    print(_mean_report(reports, args.crop).as_text())


def cmd_inspect(args) -> None:
    mpi = read_mpi(args.mpi)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    alphas = mpi.alphas()
    for i, plane in enumerate(mpi.planes):
        premultiplied = plane.color * alphas[i][:, :, None]
        depth = float(mpi.depths[i])
        write_color_png(out_dir / f"plane_{i:02d}_d{depth:.4f}.png", premultiplied)
        print(f"plane {i:02d} depth {depth:.4f} mean_alpha {float(alphas[i].mean()):.4f}")
    # Ruler strip: one tick per plane along the disparity axis, near planes
    # at the left edge.
    disparity = 1.0 / mpi.depths
    span = float(disparity[0] - disparity[-1])
    strip = np.zeros((16, mpi.width, 3), dtype=np.float32)
    for d in disparity:
        if span > 0.0:
            x = int(round((disparity[0] - d) / span * (mpi.width - 1)))
        else:
            x = 0
        strip[:, x] = 1.0
    write_color_png(out_dir / "depth_ruler.png", strip)
    print(f"wrote {mpi.n_planes} plane images to {out_dir}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ampi",
        description="Single-view novel-view synthesis with adaptive multiplane images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build an MPI from a color image and a depth map")
    p.add_argument("--image", required=True, help="source color PNG")
    p.add_argument("--depth", required=True, help="depth map (.pfm, or 16-bit .png)")
    p.add_argument("--depth-scale", type=float, default=None, help="units per integer step for png depth")
    p.add_argument("--planes", type=int, required=True, help="number of planes")
    p.add_argument("--out", required=True, help="output .ampi container")
    p.add_argument("--tau", type=float, default=0.05, help="assignment temperature (relative to the disparity span)")
    p.add_argument("--band", type=int, default=16, help="hidden-band width in pixels")
    p.add_argument("--grad-thresh", type=float, default=0.04, help="disparity step treated as a depth edge")
    p.add_argument("--no-adjust", action="store_true", help="keep disparity-uniform plane depths")
    p.add_argument("--fov", type=float, default=55.0, help="horizontal field of view in degrees")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("render", help="render novel views along a camera path")
    p.add_argument("--mpi", required=True, help="input .ampi container")
    p.add_argument("--path", required=True, help="camera path file")
    p.add_argument("--out-dir", required=True, help="directory for frame_%%05d.png")
    p.add_argument("--size", default=None, help="output size as WIDTHxHEIGHT (default: container size)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("genpairs", help="generate warp-back stereo training pairs")
    p.add_argument("--image", nargs="+", required=True, help="source color PNGs")
    p.add_argument("--depth", nargs="+", required=True, help="matching depth maps")
    p.add_argument("--depth-scale", type=float, default=None, help="units per integer step for png depth")
    p.add_argument("--count", type=int, default=1, help="pairs per image")
    p.add_argument("--seed", type=int, default=0, help="base seed; pair k uses seed+k")
    p.add_argument("--out-dir", required=True, help="dataset directory")
    p.add_argument("--tx", type=float, default=0.10, help="max |x| translation")
    p.add_argument("--ty", type=float, default=0.10, help="max |y| translation")
    p.add_argument("--tz", type=float, default=0.05, help="max |z| translation, relative to median depth")
    p.add_argument("--rx", type=float, default=3.0, help="max |x| rotation in degrees")
    p.add_argument("--ry", type=float, default=3.0, help="max |y| rotation in degrees")
    p.add_argument("--rz", type=float, default=3.0, help="max |z| rotation in degrees")
    p.add_argument("--fov-min", type=float, default=45.0, help="min sampled field of view")
    p.add_argument("--fov-max", type=float, default=65.0, help="max sampled field of view")
    p.set_defaults(func=cmd_genpairs)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--pred", required=True, help="prediction PNG or directory")
    p.add_argument("--gt", required=True, help="reference PNG or directory")
    p.add_argument("--crop", type=float, default=0.05, help="border fraction cropped before scoring")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump per-plane alpha-multiplied images")
    p.add_argument("--mpi", required=True, help="input .ampi container")
    p.add_argument("--out-dir", required=True, help="directory for plane images")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    threads_from_env()
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
