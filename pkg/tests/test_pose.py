import math

import numpy as np
import pytest

from dfm.errors import DegenerateOverlap, EmptyMask, ImageSizeMismatch, InputError, ZeroQuaternion
from dfm.geometry import Intrinsics, RigidMotion, UnitQuaternion
from dfm.pose import (
    PhotometricObjective,
    PoseLossConfig,
    optimize_pose,
    photometric_loss,
    rotation_error_deg,
    smoothness_loss,
    ssim_map,
    supervised_pose_loss,
    synthesize_view,
    translation_error,
)
from dfm.synth import Box, Plane, Scene, ValueNoise, fronto_parallel_plane, render

CAM = Intrinsics(180.0, 180.0, 160.0, 48.0)
SIZE = (96, 320)


def tex(seed):
    return ValueNoise(seed=seed, cell=0.4, octaves=4)


@pytest.fixture(scope="module")
def scene():
    return Scene(
        (
            Plane((0, 1.65, 0), (0, -1, 0), tex(1)),
            fronto_parallel_plane(30.0, tex(2)),
            Box((-3, 0.5, 10), (2, 2.3, 2), tex(3)),
            Box((3, 0, 14), (2.5, 3.3, 3), tex(4)),
        )
    )


@pytest.fixture(scope="module")
def smooth_pair():
    # the ground plane is left out: point-sampled texture aliases near the horizon
    smooth = Scene(
        (
            fronto_parallel_plane(15.0, ValueNoise(2, cell=1.0, octaves=3)),
            Box((-3, 0.5, 10), (2, 2.3, 2), ValueNoise(3, cell=1.0, octaves=3)),
            Box((3, 0, 12), (2.5, 3.3, 3), ValueNoise(4, cell=1.0, octaves=3)),
        )
    )
    T = RigidMotion(UnitQuaternion.from_axis_angle((0.2, 1, 0.1), math.radians(2)), (0.1, 0.03, -0.3))
    img_t, depth_t = render(smooth, CAM, RigidMotion.identity(), SIZE)
    img_p, depth_p = render(smooth, CAM, T, SIZE)
    return img_t, img_p, depth_t, depth_p, T


@pytest.fixture(scope="module")
def pair(scene):
    rot = UnitQuaternion.from_axis_angle((0.2, 1, 0.1), math.radians(2))
    T = RigidMotion(rot, tuple(0.3 * np.array([0.3, 0.1, -1]) / np.linalg.norm([0.3, 0.1, -1])))
    img_t, depth = render(scene, CAM, RigidMotion.identity(), SIZE)
    img_p, _ = render(scene, CAM, T, SIZE)
    return img_t, img_p, depth, T


class TestSynthesize:
    def test_identity(self, rng):
        img = rng.random(SIZE)
        out, ok = synthesize_view(img, np.full(SIZE, 7.0), CAM, RigidMotion.identity())
        assert ok.all() and np.array_equal(out, img)

    def test_ground_truth_reconstructs(self, smooth_pair):
        img_t, img_p, depth, _, T = smooth_pair
        out, ok = synthesize_view(img_p, depth, CAM, T)
        assert ok.mean() > 0.5
        assert np.mean(np.abs(out - img_t)[ok] < 0.02) >= 0.95

    def test_behind_camera(self, rng):
        flip = RigidMotion(UnitQuaternion.from_axis_angle((0, 1, 0), math.pi), (0, 0, 0))
        _, ok = synthesize_view(rng.random(SIZE), np.full(SIZE, 5.0), CAM, flip)
        assert not ok.any()

    def test_round_trip(self, smooth_pair):
        img_t, img_p, depth_t, depth_p, T = smooth_pair
        fwd, ok1 = synthesize_view(img_p, depth_t, CAM, T)
        # invalid samples poison their neighbourhood so only doubly valid pixels remain
        back, ok2 = synthesize_view(np.where(ok1, fwd, np.nan), depth_p, CAM, T.inverse())
        both = ok2 & np.isfinite(back)
        assert both.mean() > 0.5
        assert np.abs(back - img_p)[both].mean() < 0.01

    def test_size_mismatch(self):
        with pytest.raises(ImageSizeMismatch):
            synthesize_view(np.zeros((4, 4)), np.ones((4, 5)), CAM, RigidMotion.identity())


class TestSsim:
    def test_self_is_one(self, rng):
        a = rng.random((20, 30))
        np.testing.assert_allclose(ssim_map(a, a), 1.0, atol=1e-12)

    def test_independent_noise(self, rng):
        s = ssim_map(rng.random((100, 100)), rng.random((100, 100)))
        assert abs(s.mean()) < 0.1

    def test_inverted_is_negative(self, rng):
        a = rng.random((50, 50))
        assert ssim_map(a, 1 - a).mean() < 0

    def test_range_and_symmetry(self, rng):
        for _ in range(20):
            a, b = rng.random((15, 15)), rng.random((15, 15)) ** 3
            s = ssim_map(a, b)
            assert np.all(s >= -1 - 1e-9) and np.all(s <= 1 + 1e-9)
            assert np.abs(s - ssim_map(b, a)).max() < 1e-12

    def test_mismatch(self):
        with pytest.raises(ImageSizeMismatch):
            ssim_map(np.zeros((3, 3)), np.zeros((3, 4)))


class TestPhotometric:
    def test_identical(self, rng):
        a = rng.random((20, 20))
        assert photometric_loss(a, a, np.ones(a.shape, bool)) == pytest.approx(0.0, abs=1e-12)

    def test_alpha_extremes(self, rng):
        a, b = rng.random((20, 20)), rng.random((20, 20))
        m = rng.random((20, 20)) > 0.3
        assert photometric_loss(a, b, m, 0.0) == pytest.approx(np.abs(a - b)[m].mean(), rel=1e-12)
        assert photometric_loss(a, b, m, 1.0) == pytest.approx(((1 - ssim_map(a, b)) / 2)[m].mean(), rel=1e-12)

    def test_empty_mask(self, rng):
        with pytest.raises(EmptyMask):
            photometric_loss(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4), bool))


class TestSmoothness:
    def test_constant_depth(self, rng):
        assert smoothness_loss(np.full((10, 10), 5.0), rng.random((10, 10))) == 0.0

    def test_edge_aligned_step_is_cheaper(self):
        d = np.ones((10, 10))
        d[:, 5:] = 2.0
        edge = np.zeros((10, 10))
        edge[:, 5:] = 1.0
        assert smoothness_loss(d, edge) < smoothness_loss(d, np.zeros((10, 10)))

    def test_ramp_on_flat_image(self):
        d = 10.0 + 0.5 * np.arange(20)[None, :] * np.ones((8, 1))
        expected = 0.5 / d.mean()
        assert abs(smoothness_loss(d, np.zeros((8, 20))) - expected) < 1e-9
        assert abs(smoothness_loss(d, np.zeros((8, 20)), normalize=False) - 0.5) < 1e-9


class TestSupervised:
    T = RigidMotion(UnitQuaternion.from_axis_angle((0, 1, 0), 0.1), (0.2, 0.0, 1.0))

    def test_exact(self):
        assert supervised_pose_loss(self.T.t, self.T.rotation.as_array(), self.T) == 0.0

    def test_double_cover(self):
        assert supervised_pose_loss(self.T.t, -self.T.rotation.as_array(), self.T) == 0.0

    def test_translation_offset(self):
        for lam in (0.0, 1.0, 7.0):
            loss = supervised_pose_loss(self.T.t + [0.1, 0, 0], 3 * self.T.rotation.as_array(), self.T, lam)
            assert loss == pytest.approx(0.1, abs=1e-12)

    def test_zero_quaternion(self):
        with pytest.raises(ZeroQuaternion):
            supervised_pose_loss(self.T.t, np.zeros(4), self.T)


class TestObjective:
    def test_gradient_matches_differences(self, pair, rng):
        img_t, img_p, depth, T = pair
        obj = PhotometricObjective(img_t, img_p, depth, CAM)
        for _ in range(5):
            T0 = RigidMotion.exp(rng.normal(0, [0.05, 0.05, 0.05, 0.01, 0.01, 0.01])) @ T
            sup = obj.support(T0)
            _, g = obj.value_and_grad(T0, sup)
            gn = obj.numeric_grad(T0, 1e-5, sup)
            assert np.linalg.norm(g - gn) / np.linalg.norm(gn) < 1e-3

    def test_true_pose_beats_perturbed(self, pair, rng):
        img_t, img_p, depth, T = pair
        obj = PhotometricObjective(img_t, img_p, depth, CAM)
        f0 = obj.value(T)
        for _ in range(5):
            assert obj.value(RigidMotion.exp(rng.normal(0, 0.03, 6)) @ T) > f0

    def test_degenerate_overlap(self, pair):
        img_t, img_p, depth, _ = pair
        away = RigidMotion.identity().with_translation((200.0, 0.0, 0.0))
        with pytest.raises(DegenerateOverlap):
            PhotometricObjective(img_t, img_p, depth, CAM).value(away)

    def test_config_validation(self):
        with pytest.raises(InputError):
            PoseLossConfig(alpha=1.5)
        with pytest.raises(InputError):
            PoseLossConfig(pyramid_levels=0)


class TestOptimize:
    def test_recovers_motion(self, pair):
        img_t, img_p, depth, T = pair
        est, diag = optimize_pose(img_t, img_p, depth, CAM)
        assert translation_error(est, T) < 0.01 * 0.3
        assert rotation_error_deg(est, T) < 0.1
        assert diag.final_loss < diag.initial_loss

    def test_init_at_truth_stays(self, pair):
        img_t, img_p, depth, T = pair
        est, _ = optimize_pose(img_t, img_p, depth, CAM, init=T)
        assert translation_error(est, T) < 0.003 and rotation_error_deg(est, T) < 0.05

    def test_zero_motion(self, pair):
        img_t, _, depth, _ = pair
        est, diag = optimize_pose(img_t, img_t, depth, CAM)
        assert translation_error(est, RigidMotion.identity()) < 1e-6
        assert rotation_error_deg(est, RigidMotion.identity()) < 1e-4

    def test_metric_scale(self, scene):
        # scaling scene depth by s scales the recovered translation by s
        T = RigidMotion.identity().with_translation((0.05, 0.0, -0.3))
        img_t, depth = render(scene, CAM, RigidMotion.identity(), SIZE)
        img_p, _ = render(scene, CAM, T, SIZE)
        est1, _ = optimize_pose(img_t, img_p, depth, CAM)
        est2, _ = optimize_pose(img_t, img_p, 2.0 * depth, CAM, init=RigidMotion.identity())
        np.testing.assert_allclose(est2.t, 2.0 * est1.t, rtol=0.01, atol=0.01 * np.linalg.norm(est1.t))
