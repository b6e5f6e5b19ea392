"""End-to-end tests driving the command line through main()."""

import re

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from ampi.cli import main
from ampi.fileio import (
    read_color_png,
    read_mpi,
    read_pair,
    write_color_png,
    write_pfm,
)
from ampi.metrics import evaluate, psnr
from ampi.warpback import mesh_from_depth, rasterize


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def smooth_rgbd(tmp_path, seed=3, h=24, w=32, near=2.0, far=3.0):
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.random((h, w, 3)), sigma=(6, 6, 0))
    img -= img.min()
    img /= img.max()
    disp = gaussian_filter(rng.random((h, w)), sigma=8)
    disp -= disp.min()
    disp /= disp.max()
    disp = 1.0 / far + disp * (1.0 / near - 1.0 / far)
    image_path = tmp_path / "color.png"
    depth_path = tmp_path / "depth.pfm"
    write_color_png(image_path, img.astype(np.float32))
    write_pfm(depth_path, (1.0 / disp).astype(np.float32))
    return image_path, depth_path


class TestBuild:
    def test_container_size_formula(self, capsys, tmp_path):
        image_path, depth_path = smooth_rgbd(tmp_path)
        out = tmp_path / "o.ampi"
        code, stdout, _ = run(
            capsys,
            "build",
            "--image", str(image_path),
            "--depth", str(depth_path),
            "--planes", "16",
            "--out", str(out),
        )
        assert code == 0
        assert "init assign=" in stdout and "final assign=" in stdout
        pixels = 24 * 32
        assert out.stat().st_size == 36 + 16 * (4 + 16 * pixels)
        assert read_mpi(out).n_planes == 16

    def test_zero_planes_rejected(self, capsys, tmp_path):
        image_path, depth_path = smooth_rgbd(tmp_path)
        code, _, err = run(
            capsys,
            "build",
            "--image", str(image_path),
            "--depth", str(depth_path),
            "--planes", "0",
            "--out", str(tmp_path / "o.ampi"),
        )
        assert code == 2
        assert "plane count" in err

    def test_missing_image_is_io_error(self, capsys, tmp_path):
        _, depth_path = smooth_rgbd(tmp_path)
        code, _, err = run(
            capsys,
            "build",
            "--image", str(tmp_path / "absent.png"),
            "--depth", str(depth_path),
            "--planes", "4",
            "--out", str(tmp_path / "o.ampi"),
        )
        assert code == 1
        assert "error:" in err

    def test_shape_mismatch_rejected(self, capsys, tmp_path):
        image_path, _ = smooth_rgbd(tmp_path)
        bad_depth = tmp_path / "bad.pfm"
        write_pfm(bad_depth, np.full((8, 8), 2.0, dtype=np.float32))
        code, _, err = run(
            capsys,
            "build",
            "--image", str(image_path),
            "--depth", str(bad_depth),
            "--planes", "4",
            "--out", str(tmp_path / "o.ampi"),
        )
        assert code == 2
        assert "does not match" in err

    def test_no_adjust_reports_higher_assign_loss(self, capsys, tmp_path):
        # bimodal depth plus two range-stretching outliers: the uniform init
        # spans the outliers and misses both modes, adjustment lands on them
        rng = np.random.default_rng(7)
        img = np.clip(gaussian_filter(rng.random((16, 24, 3)), sigma=(4, 4, 0)) + 0.2, 0, 1)
        depth = np.full((16, 24), 1.0, dtype=np.float32)
        depth[:, 12:] = 10.0
        depth[0, 0] = 0.2
        depth[15, 23] = 40.0
        image_path = tmp_path / "c.png"
        depth_path = tmp_path / "d.pfm"
        write_color_png(image_path, img.astype(np.float32))
        write_pfm(depth_path, depth)

        def final_assign(*extra):
            code, stdout, _ = run(
                capsys,
                "build",
                "--image", str(image_path),
                "--depth", str(depth_path),
                "--planes", "2",
                "--out", str(tmp_path / "o.ampi"),
                *extra,
            )
            assert code == 0
            return float(re.search(r"final assign=([0-9.]+)", stdout).group(1))

        assert final_assign("--no-adjust") > final_assign()


class TestRender:
    def build_container(self, capsys, tmp_path, planes=8):
        image_path, depth_path = smooth_rgbd(tmp_path)
        out = tmp_path / "scene.ampi"
        code, _, _ = run(
            capsys,
            "build",
            "--image", str(image_path),
            "--depth", str(depth_path),
            "--planes", str(planes),
            "--out", str(out),
        )
        assert code == 0
        return image_path, out

    def test_identity_frame_matches_source(self, capsys, tmp_path):
        image_path, container = self.build_container(capsys, tmp_path)
        path_file = tmp_path / "path.txt"
        path_file.write_text("1 0 0 0 1 0 0 0 1 0 0 0\n")
        out_dir = tmp_path / "frames"
        code, stdout, _ = run(
            capsys, "render", "--mpi", str(container), "--path", str(path_file),
            "--out-dir", str(out_dir),
        )
        assert code == 0
        assert "wrote 1 frames" in stdout
        frame = read_color_png(out_dir / "frame_00000.png")
        assert psnr(frame, read_color_png(image_path)) >= 40.0

    def test_empty_path_writes_no_frames(self, capsys, tmp_path):
        _, container = self.build_container(capsys, tmp_path)
        path_file = tmp_path / "path.txt"
        path_file.write_text("# no frames\n")
        out_dir = tmp_path / "frames"
        code, stdout, _ = run(
            capsys, "render", "--mpi", str(container), "--path", str(path_file),
            "--out-dir", str(out_dir),
        )
        assert code == 0
        assert "wrote 0 frames" in stdout
        assert list(out_dir.glob("*.png")) == []

    def test_size_and_fov_override(self, capsys, tmp_path):
        _, container = self.build_container(capsys, tmp_path)
        path_file = tmp_path / "path.txt"
        path_file.write_text(
            "1 0 0 0 1 0 0 0 1 0.02 0 0\n"
            "1 0 0 0 1 0 0 0 1 0 0 0 48.0\n"
        )
        out_dir = tmp_path / "frames"
        code, _, _ = run(
            capsys, "render", "--mpi", str(container), "--path", str(path_file),
            "--out-dir", str(out_dir), "--size", "64x48",
        )
        assert code == 0
        for name in ("frame_00000.png", "frame_00001.png"):
            assert read_color_png(out_dir / name).shape == (48, 64, 3)

    def test_malformed_container_rejected(self, capsys, tmp_path):
        bad = tmp_path / "bad.ampi"
        bad.write_bytes(b"JUNK" + b"\x00" * 64)
        path_file = tmp_path / "path.txt"
        path_file.write_text("1 0 0 0 1 0 0 0 1 0 0 0\n")
        code, _, err = run(
            capsys, "render", "--mpi", str(bad), "--path", str(path_file),
            "--out-dir", str(tmp_path / "frames"),
        )
        assert code == 2
        assert "magic" in err

    def test_bad_size_rejected(self, capsys, tmp_path):
        _, container = self.build_container(capsys, tmp_path)
        path_file = tmp_path / "path.txt"
        path_file.write_text("1 0 0 0 1 0 0 0 1 0 0 0\n")
        code, _, err = run(
            capsys, "render", "--mpi", str(container), "--path", str(path_file),
            "--out-dir", str(tmp_path / "frames"), "--size", "64by48",
        )
        assert code == 2
        assert "WIDTHxHEIGHT" in err


class TestGenpairs:
    def test_fixed_seed_byte_reproducible(self, capsys, tmp_path):
        image_path, depth_path = smooth_rgbd(tmp_path)
        trees = []
        for sub in ("a", "b"):
            out_dir = tmp_path / sub
            code, stdout, _ = run(
                capsys, "genpairs",
                "--image", str(image_path), "--depth", str(depth_path),
                "--count", "2", "--seed", "7", "--out-dir", str(out_dir),
            )
            assert code == 0
            assert "wrote 2 pairs" in stdout
            trees.append(out_dir)
        a, b = trees
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert len(files) == 13  # 2 pairs x 6 files + manifest
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()
        manifest = (a / "manifest.txt").read_text().splitlines()
        assert manifest == ["pair_00000 7", "pair_00001 8"]

    def test_zero_ranges_identity(self, capsys, tmp_path):
        image_path, depth_path = smooth_rgbd(tmp_path)
        out_dir = tmp_path / "pairs"
        code, _, _ = run(
            capsys, "genpairs",
            "--image", str(image_path), "--depth", str(depth_path),
            "--out-dir", str(out_dir),
            "--tx", "0", "--ty", "0", "--tz", "0",
            "--rx", "0", "--ry", "0", "--rz", "0",
        )
        assert code == 0
        pair_dir = out_dir / "pair_00000"
        assert (pair_dir / "source_color.png").read_bytes() == (
            pair_dir / "target_color.png"
        ).read_bytes()
        pair = read_pair(pair_dir)
        assert not pair.holes.any()

    def test_recorded_pose_reproduces_raster(self, capsys, tmp_path):
        image_path, depth_path = smooth_rgbd(tmp_path)
        out_dir = tmp_path / "pairs"
        code, _, _ = run(
            capsys, "genpairs",
            "--image", str(image_path), "--depth", str(depth_path),
            "--seed", "21", "--out-dir", str(out_dir),
        )
        assert code == 0
        pair = read_pair(out_dir / "pair_00000")
        mesh = mesh_from_depth(pair.source_color, pair.source_depth, pair.intrinsics)
        raster = rasterize(
            mesh, pair.intrinsics, pair.pose, pair.source_color.shape[:2]
        )
        np.testing.assert_array_equal(raster.coverage, ~pair.holes)
        covered = raster.coverage
        err = np.abs(raster.color[covered] - pair.target_color[covered])
        assert err.max() <= 1.5 / 255.0

    def test_mismatched_lists_rejected(self, capsys, tmp_path):
        image_path, depth_path = smooth_rgbd(tmp_path)
        code, _, err = run(
            capsys, "genpairs",
            "--image", str(image_path), str(image_path),
            "--depth", str(depth_path),
            "--out-dir", str(tmp_path / "pairs"),
        )
        assert code == 2
        assert "depth maps" in err


class TestEval:
    def test_identical_directories(self, capsys, tmp_path):
        rng = np.random.default_rng(11)
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        for name in ("x.png", "y.png"):
            img = rng.random((20, 20, 3)).astype(np.float32)
            write_color_png(pred / name, img)
            write_color_png(gt / name, img)
        code, stdout, _ = run(capsys, "eval", "--pred", str(pred), "--gt", str(gt))
        assert code == 0
        assert stdout.count("[x.png]") == 1
        mean_block = stdout.split("[mean]")[1]
        assert "psnr: 99.000000" in mean_block
        assert "ssim: 1.000000" in mean_block

    def test_single_file_pair_matches_library(self, capsys, tmp_path):
        a = np.full((24, 24, 3), 0.2, dtype=np.float32)
        b = np.full((24, 24, 3), 0.3, dtype=np.float32)
        pa = tmp_path / "a.png"
        pb = tmp_path / "b.png"
        write_color_png(pa, a)
        write_color_png(pb, b)
        code, stdout, _ = run(capsys, "eval", "--pred", str(pa), "--gt", str(pb))
        assert code == 0
        expected = evaluate(read_color_png(pa), read_color_png(pb))
        assert f"psnr: {expected.psnr:.6f}" in stdout
        assert "[mean]" not in stdout

    def test_crop_flag_hides_border_damage(self, capsys, tmp_path):
        rng = np.random.default_rng(13)
        img = rng.random((40, 40, 3)).astype(np.float32)
        damaged = img.copy()
        damaged[0, :] = 0.0
        pa = tmp_path / "pred.png"
        pb = tmp_path / "gt.png"
        write_color_png(pa, damaged)
        write_color_png(pb, img)
        _, with_crop, _ = run(capsys, "eval", "--pred", str(pa), "--gt", str(pb))
        _, without, _ = run(capsys, "eval", "--pred", str(pa), "--gt", str(pb), "--crop", "0")
        assert "psnr: 99.000000" in with_crop
        assert "psnr: 99.000000" not in without

    def test_name_mismatch_rejected(self, capsys, tmp_path):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        img = np.zeros((12, 12, 3), dtype=np.float32)
        write_color_png(pred / "a.png", img)
        write_color_png(gt / "b.png", img)
        code, _, err = run(capsys, "eval", "--pred", str(pred), "--gt", str(gt))
        assert code == 2
        assert "same image names" in err

    def test_file_vs_directory_rejected(self, capsys, tmp_path):
        img = np.zeros((12, 12, 3), dtype=np.float32)
        pa = tmp_path / "a.png"
        write_color_png(pa, img)
        gt = tmp_path / "gt"
        gt.mkdir()
        code, _, err = run(capsys, "eval", "--pred", str(pa), "--gt", str(gt))
        assert code == 2
        assert "both" in err

    def test_shape_mismatch_rejected(self, capsys, tmp_path):
        pa = tmp_path / "a.png"
        pb = tmp_path / "b.png"
        write_color_png(pa, np.zeros((12, 12, 3), dtype=np.float32))
        write_color_png(pb, np.zeros((12, 14, 3), dtype=np.float32))
        code, _, err = run(capsys, "eval", "--pred", str(pa), "--gt", str(pb))
        assert code == 2
        assert "mismatch" in err


class TestInspect:
    def test_plane_images_and_ruler(self, capsys, tmp_path):
        image_path, depth_path = smooth_rgbd(tmp_path)
        container = tmp_path / "scene.ampi"
        run(
            capsys, "build",
            "--image", str(image_path), "--depth", str(depth_path),
            "--planes", "4", "--out", str(container),
        )
        out_dir = tmp_path / "planes"
        code, stdout, _ = run(capsys, "inspect", "--mpi", str(container), "--out-dir", str(out_dir))
        assert code == 0
        mpi = read_mpi(container)
        names = sorted(p.name for p in out_dir.glob("plane_*.png"))
        assert len(names) == 4
        assert names[0] == f"plane_00_d{float(mpi.depths[0]):.4f}.png"
        assert (out_dir / "depth_ruler.png").exists()
        assert stdout.count("mean_alpha") == 4

    def test_transmittance_weighted_sum_matches_render(self, capsys, tmp_path):
        from ampi.camera import CameraPose
        from ampi.mpi import render_view

        image_path, depth_path = smooth_rgbd(tmp_path, seed=17)
        container = tmp_path / "scene.ampi"
        run(
            capsys, "build",
            "--image", str(image_path), "--depth", str(depth_path),
            "--planes", "4", "--out", str(container),
        )
        out_dir = tmp_path / "planes"
        code, _, _ = run(capsys, "inspect", "--mpi", str(container), "--out-dir", str(out_dir))
        assert code == 0
        mpi = read_mpi(container)
        alphas = mpi.alphas().astype(np.float64)
        transmittance = np.cumprod(1.0 - alphas, axis=0)
        transmittance = np.roll(transmittance, 1, axis=0)
        transmittance[0] = 1.0
        total = np.zeros((mpi.height, mpi.width, 3))
        for i, path in enumerate(sorted(out_dir.glob("plane_*.png"))):
            total += transmittance[i][:, :, None] * read_color_png(path)
        reference = render_view(mpi, CameraPose.identity()).color
        assert np.abs(total - reference).max() <= 4 * 0.5 / 255.0 + 1e-3

    def test_opaque_constant_plane_roundtrip(self, capsys, tmp_path):
        from ampi.camera import Intrinsics
        from ampi.fileio import write_mpi
        from ampi.mpi import Mpi, MpiPlane

        h, w = 12, 16
        intr = Intrinsics(fx=20.0, fy=20.0, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)
        # zero density is opaque under the reversed alpha convention
        opaque = Mpi(
            planes=[MpiPlane(color=np.full((h, w, 3), 0.5, dtype=np.float32),
                             density=np.zeros((h, w), dtype=np.float32))],
            depths=np.array([1.0]),
            intrinsics=intr,
        )
        container = tmp_path / "one.ampi"
        write_mpi(container, opaque)
        out_dir = tmp_path / "planes"
        code, _, _ = run(capsys, "inspect", "--mpi", str(container), "--out-dir", str(out_dir))
        assert code == 0
        img = read_color_png(out_dir / "plane_00_d1.0000.png")
        assert np.allclose(img, np.rint(0.5 * 255) / 255, atol=1e-6)

    def test_transparent_plane_is_black(self, capsys, tmp_path):
        from ampi.camera import Intrinsics
        from ampi.fileio import write_mpi
        from ampi.mpi import Mpi, MpiPlane

        h, w = 8, 10
        intr = Intrinsics(fx=12.0, fy=12.0, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)
        # high density decays transmission to nothing: a transparent plane
        clear = Mpi(
            planes=[MpiPlane(color=np.full((h, w, 3), 0.9, dtype=np.float32),
                             density=np.full((h, w), 40.0, dtype=np.float32))],
            depths=np.array([2.0]),
            intrinsics=intr,
        )
        container = tmp_path / "clear.ampi"
        write_mpi(container, clear)
        out_dir = tmp_path / "planes"
        code, _, _ = run(capsys, "inspect", "--mpi", str(container), "--out-dir", str(out_dir))
        assert code == 0
        img = read_color_png(out_dir / "plane_00_d2.0000.png")
        assert img.max() == 0.0

    def test_malformed_container_rejected(self, capsys, tmp_path):
        bad = tmp_path / "bad.ampi"
        bad.write_bytes(b"AMPI" + b"\xff" * 10)
        code, _, err = run(capsys, "inspect", "--mpi", str(bad), "--out-dir", str(tmp_path / "p"))
        assert code == 2
        assert "error:" in err


class TestThreadsEnv:
    def test_thread_override_smoke(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("AMPI_THREADS", "1")
        image_path, depth_path = smooth_rgbd(tmp_path)
        code, _, _ = run(
            capsys, "build",
            "--image", str(image_path), "--depth", str(depth_path),
            "--planes", "4", "--out", str(tmp_path / "o.ampi"),
        )
        assert code == 0
