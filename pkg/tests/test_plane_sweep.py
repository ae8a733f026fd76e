import numpy as np
import pytest

from dfm.errors import ImageSizeMismatch, InputError
from dfm.geometry import Intrinsics, RigidMotion, project, warp_coords
from dfm.plane_sweep import (
    DepthDistribution,
    DepthLevels,
    FrustumVolume,
    SweepWarp,
    build_frustum_grid,
    compute_cost_volume,
    cost_to_distribution,
    distribution_to_depth,
)
from dfm.synth import Scene, ValueNoise, fronto_parallel_plane, lateral_motion, render, texture_variance

CAM = Intrinsics(300.0, 300.0, 79.5, 39.5)


def noise_image(rng, h=80, w=160):
    from scipy.ndimage import gaussian_filter

    return np.clip(gaussian_filter(rng.random((h, w)), 1.0) * 2 - 0.5, 0, 1)


def volume(values, mask=None, levels=None):
    values = np.asarray(values, dtype=float)
    levels = levels or DepthLevels.from_range(2.0, 2.0 + values.shape[2] - 1, values.shape[2])
    mask = np.ones(values.shape, bool) if mask is None else mask
    return FrustumVolume(values, mask, levels)


class TestDepthLevels:
    def test_default_spacing(self):
        lv = DepthLevels.default()
        assert lv.count == 288
        assert lv.step == (59.6 - 2.0) / 287
        assert lv.depths[0] == 2.0 and lv.d_max == pytest.approx(59.6, abs=1e-12)

    def test_rejects_single_level(self):
        with pytest.raises(InputError):
            DepthLevels(2.0, 0.2, 1)
        with pytest.raises(InputError):
            DepthLevels.from_range(2.0, 3.0, 1)

    def test_rejects_bad_range(self):
        with pytest.raises(InputError):
            DepthLevels(0.0, 0.2, 10)
        with pytest.raises(InputError):
            DepthLevels(1.0, -0.2, 10)

    def test_fractional_index_inverts_depth(self, rng):
        lv = DepthLevels.default()
        w = rng.uniform(0, 287, 100)
        np.testing.assert_allclose(lv.fractional_index(lv.depth(w)), w, atol=1e-10)


class TestFrustumGrid:
    def test_small_grid(self):
        g = build_frustum_grid(CAM, (2, 2), DepthLevels(2.0, 1.0, 3))
        assert g.d.shape == (2, 2, 3)
        assert g.d.size == 12
        assert set(np.unique(g.d)) == {2.0, 3.0, 4.0}
        assert np.array_equal(g.u[0, :, 0], [0.0, 1.0])

    def test_default_levels_span(self):
        g = build_frustum_grid(CAM, (3, 4), DepthLevels.default())
        assert g.d[0, 0, 0] == 2.0
        assert g.d[0, 0, -1] == pytest.approx(59.6, abs=1e-12)
        np.testing.assert_allclose(np.diff(g.d[1, 2]), (59.6 - 2) / 287, rtol=1e-12)


class TestCostVolume:
    def test_zero_motion_self_match(self, rng):
        img = noise_image(rng)
        lv = DepthLevels.from_range(2.0, 40.0, 16)
        for kind in ("sad", "ssd"):
            vol = compute_cost_volume(img, img, CAM, RigidMotion.identity(), lv, kind)
            assert np.all(vol.values[vol.mask] == 0.0)
        vol = compute_cost_volume(img, img, CAM, RigidMotion.identity(), lv, "zncc")
        # zncc is accumulated in float32, so self-match is zero up to round-off
        assert np.abs(vol.values[vol.mask]).max() < 1e-4
        inner = vol.values[2:-2, 2:-2]
        assert vol.mask[2:-2, 2:-2].all()
        assert np.var(inner, axis=2).max() < 1e-9

    def test_outside_is_masked(self, rng):
        img = noise_image(rng)
        lv = DepthLevels.from_range(2.0, 40.0, 8)
        vol = compute_cost_volume(img, img, CAM, lateral_motion(1.0), lv)
        # at 2 m a 1 m baseline shifts by 150 px: everything leaves the 160 px image but a sliver
        assert vol.mask[:, :, 0].mean() < 0.1
        assert vol.mask[:, :, -1].mean() > 0.8
        # the border where the 5x5 patch leaves the frame-t image is always masked
        assert not vol.mask[:2].any() and not vol.mask[:, -2:].any()

    def test_size_mismatch(self, rng):
        with pytest.raises(ImageSizeMismatch):
            compute_cost_volume(np.zeros((10, 10)), np.zeros((10, 11)), CAM, RigidMotion.identity(), DepthLevels(2, 1, 3))

    def test_bad_cost_kind(self, rng):
        img = noise_image(rng)
        with pytest.raises(InputError):
            compute_cost_volume(img, img, CAM, RigidMotion.identity(), DepthLevels(2, 1, 3), "census")

    def test_volume_is_immutable(self, rng):
        img = noise_image(rng)
        vol = compute_cost_volume(img, img, CAM, RigidMotion.identity(), DepthLevels(2, 1, 3))
        with pytest.raises(ValueError):
            vol.values[0, 0, 0] = 1.0

    def test_threads_match_serial(self, rng):
        a, b = noise_image(rng), noise_image(rng)
        lv = DepthLevels.from_range(2.0, 30.0, 12)
        T = lateral_motion(0.3)
        v1 = compute_cost_volume(a, b, CAM, T, lv)
        v4 = compute_cost_volume(a, b, CAM, T, lv, threads=4)
        assert np.array_equal(v1.values, v4.values) and np.array_equal(v1.mask, v4.mask)

    def test_recovers_plane_depth(self):
        scene = Scene((fronto_parallel_plane(8.0, ValueNoise(3, cell=0.2, octaves=3)),))
        img_t, gt = render(scene, CAM, RigidMotion.identity(), (80, 160))
        T = lateral_motion(0.4)
        img_p, _ = render(scene, CAM, T, (80, 160))
        lv = DepthLevels.from_range(2.0, 20.0, 91)
        vol = compute_cost_volume(img_t, img_p, CAM, T, lv)
        depth = distribution_to_depth(cost_to_distribution(vol, 0.1))
        ok = np.isfinite(depth) & (texture_variance(img_t) > 1e-4)
        # the true match shifts 15 px left; columns whose match leaves the image are unmatchable
        ok[:, :18] = False
        assert ok.mean() > 0.5
        assert np.mean(np.abs(depth[ok] - 8.0) <= lv.step) >= 0.95


class TestWarpConsistency:
    def test_sample_lands_on_true_projection(self, rng):
        T = RigidMotion.exp(rng.normal(0, [0.3, 0.1, 0.5, 0.02, 0.02, 0.02]))
        lv = DepthLevels.default()
        warp = SweepWarp(CAM, T, 80, 160)
        for w_idx in (0, 57, 143, 287):
            d = lv.depths[w_idx]
            u, v, _ = warp(d)
            for (r, c) in [(10, 20), (40, 80), (70, 150)]:
                p1 = np.array([(c - CAM.cu) / CAM.fx * d, (r - CAM.cv) / CAM.fy * d, d])
                (ut, vt), _ = project(CAM, T.apply(p1))
                assert abs(u[r, c] - ut) < 0.5 and abs(v[r, c] - vt) < 0.5

    def test_matches_warp_coords(self, rng):
        T = RigidMotion.exp(rng.normal(0, 0.1, 6))
        warp = SweepWarp(CAM, T, 80, 160)
        v, u = np.mgrid[0:80, 0:160].astype(float)
        a = warp(12.5)
        b = warp_coords(CAM, T, u, v, 12.5)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-9)


class TestDistribution:
    def test_uniform_costs(self):
        dist = cost_to_distribution(volume(np.full((2, 3, 5), 0.7)))
        np.testing.assert_allclose(dist.probs, 0.2, rtol=1e-12)

    def test_sharp_minimum(self):
        c = np.full((1, 1, 10), 10.0)
        c[0, 0, 4] = 0.0
        dist = cost_to_distribution(volume(c), temperature=0.01)
        assert dist.probs[0, 0, 4] > 0.999

    def test_masked_pixel_invalid(self):
        c = np.zeros((2, 2, 4))
        m = np.ones(c.shape, bool)
        m[1, 1] = False
        m[0, 0, :2] = False
        dist = cost_to_distribution(volume(c, m))
        assert not dist.valid[1, 1] and dist.valid[0, 0]
        assert np.all(dist.probs[0, 0, :2] == 0) and dist.probs[0, 0, 2:].sum() == pytest.approx(1.0)

    def test_normalised(self, rng):
        c = rng.uniform(0, 2, (6, 7, 30))
        m = rng.random(c.shape) > 0.3
        dist = cost_to_distribution(volume(c, m), 0.05)
        s = dist.probs.sum(axis=2)
        np.testing.assert_allclose(s[dist.valid], 1.0, atol=1e-6)
        assert np.all(dist.probs >= 0)

    def test_lowering_cost_raises_probability(self, rng):
        for _ in range(50):
            c = rng.uniform(0, 2, (1, 1, 20))
            k = rng.integers(20)
            before = cost_to_distribution(volume(c), 0.1).probs[0, 0, k]
            c2 = c.copy()
            c2[0, 0, k] -= rng.uniform(0, 1)
            after = cost_to_distribution(volume(c2), 0.1).probs[0, 0, k]
            assert after >= before

    def test_rejects_temperature(self):
        with pytest.raises(InputError):
            cost_to_distribution(volume(np.zeros((1, 1, 3))), 0.0)


class TestToDepth:
    def test_one_hot(self):
        lv = DepthLevels(2.0, 0.2, 20)
        p = np.zeros((1, 1, 20))
        p[0, 0, 5] = 1.0
        dist = DepthDistribution(p, np.ones((1, 1), bool), lv)
        assert distribution_to_depth(dist, "argmax")[0, 0] == 3.0
        assert distribution_to_depth(dist, "expectation")[0, 0] == 3.0

    def test_two_bin_expectation(self):
        lv = DepthLevels(10.0, 2.0, 5)
        p = np.zeros((1, 1, 5))
        p[0, 0, :2] = 0.5
        dist = DepthDistribution(p, np.ones((1, 1), bool), lv)
        assert distribution_to_depth(dist, "expectation")[0, 0] == 11.0

    def test_parabolic_refinement(self):
        lv = DepthLevels(2.0, 1.0, 5)
        p = np.array([0.0, 0.3, 0.5, 0.2, 0.0])[None, None]
        dist = DepthDistribution(p, np.ones((1, 1), bool), lv)
        off = 0.5 * (0.3 - 0.2) / (0.3 - 1.0 + 0.2)
        assert distribution_to_depth(dist)[0, 0] == pytest.approx(4.0 + off)
        assert distribution_to_depth(dist, refine=False)[0, 0] == 4.0

    def test_invalid_is_nan(self):
        lv = DepthLevels(2.0, 1.0, 3)
        dist = DepthDistribution(np.zeros((1, 2, 3)), np.array([[False, False]]), lv)
        assert np.isnan(distribution_to_depth(dist)).all()

    def test_unknown_mode(self):
        dist = DepthDistribution(np.ones((1, 1, 3)) / 3, np.ones((1, 1), bool), DepthLevels(2, 1, 3))
        with pytest.raises(InputError):
            distribution_to_depth(dist, "median")
