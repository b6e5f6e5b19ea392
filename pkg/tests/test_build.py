"""Tests for multiplane image construction."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from ampi.build import (
    BuildParams,
    build_mpi,
    derive_masks,
    inpaint_hidden,
    occlusion_regions,
    visible_alphas,
)
from ampi.camera import CameraPose, Intrinsics
from ampi.mpi import render_view
from ampi.planes import adjust_planes, init_planes, soft_assign
from ampi.validate import ValidationError


def make_intrinsics(w, h):
    return Intrinsics(fx=0.8 * w, fy=0.8 * w, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


def composite_weights_oracle(alphas):
    """Front-to-back weights by direct recursion: w_i = a_i prod_{j<i}(1-a_j)."""
    a = np.asarray(alphas, dtype=np.float64)
    trans = np.cumprod(1.0 - a, axis=0)
    shifted = np.concatenate([np.ones_like(a[:1]), trans[:-1]], axis=0)
    return a * shifted


def smooth_texture(rng, h, w):
    img = rng.random((h, w, 3))
    img = gaussian_filter(img, sigma=(3, 3, 0))
    img -= img.min()
    img /= img.max()
    return img.astype(np.float32)


def psnr(a, b):
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return 10.0 * np.log10(1.0 / mse) if mse > 0 else np.inf


class TestDeriveMasks:
    def test_context_starts_at_one_rendering_ends_at_one(self):
        rng = np.random.default_rng(0)
        raw = rng.random((5, 9, 9)).astype(np.float64)
        feature = raw / raw.sum(axis=0)
        masks = derive_masks(feature)
        np.testing.assert_allclose(masks.context[0], 1.0, atol=1e-6)
        np.testing.assert_allclose(masks.rendering[-1], 1.0, atol=1e-6)

    def test_partial_sum_identity(self):
        rng = np.random.default_rng(1)
        raw = rng.random((7, 6, 8)).astype(np.float64)
        feature = raw / raw.sum(axis=0)
        masks = derive_masks(feature)
        combined = masks.context + masks.rendering - masks.feature
        np.testing.assert_allclose(combined, 1.0, atol=1e-6)

    def test_rejects_unnormalized_stack(self):
        with pytest.raises(ValidationError):
            derive_masks(np.full((3, 4, 4), 0.5))


class TestVisibleAlphas:
    def test_one_hot_gives_opaque_plane(self):
        feature = np.zeros((4, 5, 5))
        feature[2] = 1.0
        masks = derive_masks(feature)
        alphas = visible_alphas(masks)
        np.testing.assert_allclose(alphas[2], 1.0)
        weights = composite_weights_oracle(alphas)
        np.testing.assert_allclose(weights[2], 1.0, atol=1e-6)

    def test_half_half_split(self):
        feature = np.full((2, 3, 3), 0.5)
        alphas = visible_alphas(derive_masks(feature))
        np.testing.assert_allclose(alphas[0], 0.5, atol=1e-6)
        np.testing.assert_allclose(alphas[1], 1.0, atol=1e-6)
        weights = composite_weights_oracle(alphas)
        np.testing.assert_allclose(weights, 0.5, atol=1e-6)

    def test_weights_recover_masks_on_random_stacks(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            raw = rng.random((6, 8, 8)) ** 2
            feature = raw / raw.sum(axis=0)
            masks = derive_masks(feature)
            alphas = visible_alphas(masks, eps=1e-4)
            weights = composite_weights_oracle(alphas)
            ok = masks.context >= 1e-4
            err = np.abs(weights - masks.feature)[ok]
            assert err.max() < 1e-5


class TestOcclusionRegions:
    def test_constant_depth_empty(self):
        depth = np.full((10, 10), 3.0, dtype=np.float32)
        regions = occlusion_regions(depth, np.array([1.0, 3.0, 9.0]))
        assert not regions.any()

    def test_vertical_step_band_geometry(self):
        h, w = 8, 20
        depth = np.where(np.arange(w) < 10, 1.0, 10.0)[None].repeat(h, axis=0).astype(np.float32)
        planes = np.array([1.0, 10.0])
        regions = occlusion_regions(depth, planes, grad_thresh=0.04, hidden_band=4)
        expected_far = np.zeros((h, w), dtype=bool)
        expected_far[:, 6:10] = True  # four columns on the near side of the edge
        np.testing.assert_array_equal(regions[1], expected_far)
        assert not regions[0].any()

    def test_right_facing_foreground(self):
        h, w = 6, 20
        depth = np.where(np.arange(w) >= 10, 1.0, 10.0)[None].repeat(h, axis=0).astype(np.float32)
        regions = occlusion_regions(depth, np.array([1.0, 10.0]), hidden_band=3)
        expected_far = np.zeros((h, w), dtype=bool)
        expected_far[:, 10:13] = True
        np.testing.assert_array_equal(regions[1], expected_far)

    def test_horizontal_edge_uses_rows(self):
        h, w = 20, 6
        depth = np.where(np.arange(h) < 10, 1.0, 10.0)[:, None].repeat(w, axis=1).astype(np.float32)
        regions = occlusion_regions(depth, np.array([1.0, 10.0]), hidden_band=5)
        expected_far = np.zeros((h, w), dtype=bool)
        expected_far[5:10, :] = True
        np.testing.assert_array_equal(regions[1], expected_far)

    def test_threshold_above_step_empty(self):
        h, w = 8, 20
        depth = np.where(np.arange(w) < 10, 1.0, 10.0)[None].repeat(h, axis=0).astype(np.float32)
        regions = occlusion_regions(depth, np.array([1.0, 10.0]), grad_thresh=1.0, hidden_band=4)
        assert not regions.any()

    def test_band_clipped_at_image_border(self):
        h, w = 4, 6
        depth = np.where(np.arange(w) < 2, 1.0, 10.0)[None].repeat(h, axis=0).astype(np.float32)
        regions = occlusion_regions(depth, np.array([1.0, 10.0]), hidden_band=16)
        expected_far = np.zeros((h, w), dtype=bool)
        expected_far[:, 0:2] = True
        np.testing.assert_array_equal(regions[1], expected_far)

    def test_intermediate_planes_marked(self):
        # step from depth 1 to 4 with planes at 1, 2, 4, 8: the hidden
        # interval covers planes behind the foreground up to the
        # background plane, not the farthest plane
        h, w = 4, 16
        depth = np.where(np.arange(w) < 8, 1.0, 4.0)[None].repeat(h, axis=0).astype(np.float32)
        planes = np.array([1.0, 2.0, 4.0, 8.0])
        regions = occlusion_regions(depth, planes, hidden_band=2)
        assert not regions[0].any()
        assert regions[1][:, 6:8].all()
        assert regions[2][:, 6:8].all()
        assert not regions[3].any()


class TestInpaintHidden:
    def test_constant_background_fills_exactly(self):
        h, w = 12, 24
        depth = np.where(np.arange(w) < 12, 1.0, 10.0)[None].repeat(h, axis=0).astype(np.float32)
        color = np.empty((h, w, 3), dtype=np.float32)
        color[:, :12] = [0.9, 0.1, 0.1]
        color[:, 12:] = [0.2, 0.4, 0.6]
        planes = np.array([1.0, 10.0])
        feature = soft_assign(depth, planes, tau=0.01)
        masks = derive_masks(feature)
        regions = occlusion_regions(depth, planes, hidden_band=4)
        hidden_color, hidden_alpha = inpaint_hidden(color, depth, masks, regions)
        band = regions[1]
        assert np.allclose(hidden_color[1][band], [0.2, 0.4, 0.6], atol=1e-5)
        np.testing.assert_array_equal(hidden_alpha[1][band], 1.0)
        assert not hidden_alpha[0].any()

    def test_empty_regions_zero_output(self):
        h, w = 6, 6
        depth = np.full((h, w), 2.0, dtype=np.float32)
        color = np.full((h, w, 3), 0.5, dtype=np.float32)
        planes = np.array([1.0, 2.0, 4.0])
        masks = derive_masks(soft_assign(depth, planes, tau=0.01))
        regions = np.zeros((3, h, w), dtype=bool)
        hidden_color, hidden_alpha = inpaint_hidden(color, depth, masks, regions)
        assert not hidden_color.any()
        assert not hidden_alpha.any()


class TestBuildMpi:
    def test_constant_depth_one_hot_weights(self):
        h, w = 12, 16
        intr = make_intrinsics(w, h)
        image = np.full((h, w, 3), 0.6, dtype=np.float32)
        depth = np.full((h, w), 2.0, dtype=np.float32)
        planes = np.array([0.5, 2.0, 8.0])
        mpi = build_mpi(image, depth, planes, intr)
        weights = composite_weights_oracle(mpi.alphas())
        np.testing.assert_allclose(weights[1], 1.0, atol=1e-4)
        out = render_view(mpi, CameraPose.identity())
        np.testing.assert_allclose(out.color, image, atol=1e-4)

    def test_identity_reconstruction_smooth_scene(self):
        rng = np.random.default_rng(7)
        h, w = 48, 64
        intr = make_intrinsics(w, h)
        image = smooth_texture(rng, h, w)
        ramp = np.linspace(0.2, 1.0, w)[None].repeat(h, axis=0)
        depth = (1.0 / ramp).astype(np.float32)
        planes = adjust_planes(depth, 16)
        mpi = build_mpi(image, depth, planes, intr)
        out = render_view(mpi, CameraPose.identity())
        assert psnr(out.color, image) >= 40.0

    def test_two_region_scene_plane_supports(self):
        h, w = 16, 32
        intr = make_intrinsics(w, h)
        depth = np.where(np.arange(w) < 16, 1.0, 10.0)[None].repeat(h, axis=0).astype(np.float32)
        image = np.empty((h, w, 3), dtype=np.float32)
        image[:, :16] = [0.8, 0.2, 0.1]
        image[:, 16:] = [0.1, 0.3, 0.7]
        planes = adjust_planes(depth, 2)
        params = BuildParams(hidden_band=4)
        mpi = build_mpi(depth=depth, image=image, planes=planes, intrinsics=intr, params=params)
        alphas = mpi.alphas()
        near, far = alphas[0], alphas[1]
        assert near[:, :16].min() > 0.99
        assert near[:, 16:].max() < 0.01
        assert far[:, 16:].min() > 0.99
        band = np.zeros((h, w), dtype=bool)
        band[:, 12:16] = True
        assert far[band].min() > 0.99  # backfilled band behind the near region
        assert far[:, :12].max() < 0.01
        out = render_view(mpi, CameraPose.identity())
        assert psnr(out.color, image) >= 40.0

    def test_cleanup_zeroes_low_prefix_mass(self):
        rng = np.random.default_rng(9)
        h, w = 24, 24
        intr = make_intrinsics(w, h)
        image = smooth_texture(rng, h, w)
        depth = (1.0 / np.linspace(0.15, 0.95, h)[:, None].repeat(w, axis=1)).astype(np.float32)
        planes = adjust_planes(depth, 8)
        params = BuildParams()
        mpi = build_mpi(image, depth, planes, intr, params)
        feature = soft_assign(depth, planes, _raw_tau(depth, params.tau))
        rendering = np.cumsum(feature.astype(np.float64), axis=0).astype(np.float32)
        alphas = mpi.alphas()
        low = rendering < params.eps
        assert alphas[low].max() <= 1e-5

    def test_overlay_only_inside_bands(self):
        h, w = 16, 32
        intr = make_intrinsics(w, h)
        depth = np.where(np.arange(w) < 16, 1.0, 10.0)[None].repeat(h, axis=0).astype(np.float32)
        image = np.full((h, w, 3), 0.5, dtype=np.float32)
        planes = np.array([1.0, 10.0])
        params = BuildParams(hidden_band=4)
        mpi = build_mpi(image, depth, planes, intr, params)
        regions = occlusion_regions(depth, planes, params.grad_thresh, params.hidden_band)
        feature = soft_assign(depth, planes, _raw_tau(depth, params.tau))
        masks = derive_masks(feature)
        visible = visible_alphas(masks, params.eps)
        visible[masks.rendering < params.eps] = 0.0
        alphas = mpi.alphas()
        outside = ~regions
        np.testing.assert_allclose(alphas[outside], visible[outside], atol=1e-5)

    def test_weights_match_masks_where_untouched(self):
        rng = np.random.default_rng(11)
        h, w = 32, 32
        intr = make_intrinsics(w, h)
        image = smooth_texture(rng, h, w)
        depth = (1.0 / np.linspace(0.2, 1.0, w)[None].repeat(h, axis=0)).astype(np.float32)
        planes = adjust_planes(depth, 8)
        params = BuildParams()
        mpi = build_mpi(image, depth, planes, intr, params)
        feature = soft_assign(depth, planes, _raw_tau(depth, params.tau))
        masks = derive_masks(feature)
        weights = composite_weights_oracle(mpi.alphas())
        # the float32 sigma round trip amplifies through the 1/(1 - alpha)
        # chain, so the post-build bound is looser than the pure-alpha one
        untouched = (masks.rendering >= params.eps) & (masks.context >= params.eps)
        err = np.abs(weights - masks.feature)[untouched]
        assert err.max() < 1e-4
        err_all = np.abs(weights - masks.feature)
        assert err_all.max() < 2 * params.eps

    def test_rejects_mismatched_sizes(self):
        intr = make_intrinsics(8, 8)
        image = np.zeros((8, 8, 3), dtype=np.float32)
        depth = np.ones((9, 8), dtype=np.float32)
        with pytest.raises(ValidationError):
            build_mpi(image, depth, np.array([1.0, 2.0]), intr)
        with pytest.raises(ValidationError):
            build_mpi(image, np.ones((8, 8), dtype=np.float32), np.array([2.0, 1.0]), intr)


def _raw_tau(depth, tau):
    disp = 1.0 / np.asarray(depth, dtype=np.float64)
    return tau * float(disp.max() - disp.min())
