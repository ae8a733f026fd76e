from pathlib import Path

import numpy as np
import pytest

from dfm import errors
from dfm.closed_form import Correspondence
from dfm.errors import BadMagic, MalformedLine, MissingCamera, TruncatedData
from dfm.fileio import (
    find_camera,
    parse_calibration,
    parse_poses,
    read_calibration,
    read_correspondences,
    read_gray,
    read_pfm,
    read_pnm,
    read_poses,
    read_voxel_grid,
    load_distribution,
    save_distribution,
    to_bytes,
    write_correspondences,
    write_depth_csv,
    write_pfm,
    write_pnm,
    write_poses,
    write_voxel_grid,
)
from dfm.plane_sweep import DepthDistribution, DepthLevels
from dfm.voxel import VoxelGrid, VoxelSpec

from conftest import random_motion
from oracles import GOOD_P, MALFORMED_CALIBRATIONS

FIXTURES = Path(__file__).parent / "fixtures"


class TestCalibration:
    def test_fixture_line(self):
        (rec,) = parse_calibration("P2: " + GOOD_P)
        k = rec.intrinsics
        assert (k.fx, k.fy, k.cu, k.cv) == (707.0, 707.0, 601.0, 183.0)
        assert rec.baseline_tx == 0.0

    def test_object_fixture(self):
        recs = parse_calibration((FIXTURES / "calib_object.txt").read_text())
        assert [r.camera_id for r in recs] == ["P0", "P1", "P2", "P3"]
        p2 = read_calibration(FIXTURES / "calib_object.txt")
        assert p2.camera_id == "P2" and p2.intrinsics.cu == 601.0
        assert p2.baseline_tx == pytest.approx(-45.75831 / 707.0)
        p1 = read_calibration(FIXTURES / "calib_object.txt", "P1")
        assert p1.baseline_tx == 379.8145 / 707.0

    def test_raw_fixture(self):
        rec = read_calibration(FIXTURES / "calib_cam_to_cam.txt")
        assert rec.camera_id == "P_rect_02"
        assert rec.intrinsics.fx == 721.5377 and rec.intrinsics.cv == 172.854
        assert find_camera(parse_calibration((FIXTURES / "calib_cam_to_cam.txt").read_text()), "0").camera_id == "P_rect_00"

    def test_whitespace_and_comments(self):
        text = "\n  # header\n\tP2 :\t" + GOOD_P.replace(" ", "\t ") + "   # trailing\n\n"
        assert parse_calibration(text)[0].intrinsics.fx == 707.0

    def test_unknown_camera(self):
        with pytest.raises(MissingCamera):
            find_camera(parse_calibration("P2: " + GOOD_P), "P3")

    @pytest.mark.parametrize("text, error, reason", MALFORMED_CALIBRATIONS)
    def test_malformation_classes(self, text, error, reason):
        with pytest.raises(getattr(errors, error)) as info:
            parse_calibration(text)
        if reason is not None:
            assert info.value.reason == reason
            assert info.value.line >= 1

    def test_non_numeric_position(self):
        with pytest.raises(MalformedLine) as info:
            parse_calibration("P2: " + GOOD_P + "\nR0_rect: 1 0 x")
        assert info.value.line == 2 and "token 3" in str(info.value)

    def test_malformations_are_input_errors(self):
        for text, _, _ in MALFORMED_CALIBRATIONS:
            with pytest.raises(errors.InputError):
                parse_calibration(text)


class TestPfm:
    def test_single_pixel(self, tmp_path):
        write_pfm(tmp_path / "a.pfm", [[2.0]])
        assert read_pfm(tmp_path / "a.pfm").tolist() == [[2.0]]

    def test_layout(self, tmp_path):
        write_pfm(tmp_path / "a.pfm", [[1.0, 2.0], [3.0, 4.0]])
        raw = (tmp_path / "a.pfm").read_bytes()
        assert raw.startswith(b"Pf\n2 2\n-1.0\n")
        # bottom row first, little-endian
        assert np.frombuffer(raw[-16:], "<f4").tolist() == [3.0, 4.0, 1.0, 2.0]

    def test_random_round_trips(self, tmp_path, rng):
        for i in range(100):
            h, w = rng.integers(1, 70, 2)
            a = rng.normal(0, 100, (h, w)).astype(np.float32)
            if i % 10 == 0:
                a[0, 0] = np.nan
            if i % 7 == 0:
                a = np.stack([a] * 3, axis=2)
            write_pfm(tmp_path / "r.pfm", a)
            b = read_pfm(tmp_path / "r.pfm")
            assert a.shape == b.shape and a.tobytes() == b.tobytes()

    def test_big_endian_read(self, tmp_path):
        (tmp_path / "b.pfm").write_bytes(b"Pf\n1 1\n1.0\n" + np.array([5.5], ">f4").tobytes())
        assert read_pfm(tmp_path / "b.pfm")[0, 0] == 5.5

    def test_bad_magic_and_truncation(self, tmp_path):
        (tmp_path / "x.pfm").write_bytes(b"P5\n1 1\n255\n\0")
        with pytest.raises(BadMagic):
            read_pfm(tmp_path / "x.pfm")
        write_pfm(tmp_path / "t.pfm", np.ones((4, 4)))
        data = (tmp_path / "t.pfm").read_bytes()
        (tmp_path / "t.pfm").write_bytes(data[:-3])
        with pytest.raises(TruncatedData):
            read_pfm(tmp_path / "t.pfm")


class TestPnm:
    def test_rounding(self):
        assert to_bytes([0.0, 0.5, 1.0, 1.5, -1.0, np.nan]).tolist() == [0, 128, 255, 255, 0, 0]
        # half-up: 0.5 / 255 rounds to 1
        assert to_bytes([0.5 / 255]).tolist() == [1]

    def test_random_round_trips(self, tmp_path, rng):
        for i in range(100):
            h, w = rng.integers(1, 40, 2)
            shape = (h, w, 3) if i % 2 else (h, w)
            a = rng.integers(0, 256, shape, dtype=np.uint8)
            write_pnm(tmp_path / "r.pnm", a)
            assert np.array_equal(read_pnm(tmp_path / "r.pnm", raw=True), a)
            np.testing.assert_array_equal(to_bytes(read_pnm(tmp_path / "r.pnm")), a)

    def test_float_round_trip(self, tmp_path, rng):
        a = rng.random((10, 12))
        write_pnm(tmp_path / "f.pgm", a)
        assert np.abs(read_pnm(tmp_path / "f.pgm") - a).max() <= 0.5 / 255 + 1e-12

    def test_header_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
        assert read_pnm(tmp_path / "c.pgm", raw=True).tolist() == [[0, 255]]

    def test_maxval(self, tmp_path):
        (tmp_path / "m.ppm").write_bytes(b"P6\n1 1\n65535\n" + b"\0" * 6)
        with pytest.raises(BadMagic):
            read_pnm(tmp_path / "m.ppm")

    def test_ascii_rejected(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n7\n")
        with pytest.raises(BadMagic):
            read_pnm(tmp_path / "a.pgm")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + b"\0" * 10)
        with pytest.raises(TruncatedData):
            read_pnm(tmp_path / "t.pgm")
        (tmp_path / "h.pgm").write_bytes(b"P5\n4")
        with pytest.raises(TruncatedData):
            read_pnm(tmp_path / "h.pgm")

    def test_read_gray(self, tmp_path, rng):
        rgb = rng.integers(0, 256, (3, 4, 3), dtype=np.uint8)
        write_pnm(tmp_path / "c.ppm", rgb)
        np.testing.assert_allclose(read_gray(tmp_path / "c.ppm"), rgb.mean(axis=2) / 255.0)
        write_pfm(tmp_path / "g.pfm", np.full((3, 4), 0.25))
        assert (read_gray(tmp_path / "g.pfm") == 0.25).all()


class TestPoses:
    def test_random_round_trips(self, tmp_path, rng):
        for _ in range(100):
            poses = [random_motion(rng) for _ in range(3)]
            write_poses(tmp_path / "p.txt", poses)
            back = read_poses(tmp_path / "p.txt")
            for a, b in zip(poses, back):
                assert np.array_equal(a.t, b.t) and np.allclose(a.R, b.R, atol=1e-15)

    def test_malformed(self):
        with pytest.raises(MalformedLine) as info:
            parse_poses("0 0 0 1 0 0 0\n0 0 0 1 0 0")
        assert info.value.line == 2 and info.value.reason == "wrong_count"
        with pytest.raises(MalformedLine):
            parse_poses("0 0 x 1 0 0 0")
        with pytest.raises(MalformedLine):
            parse_poses("0 0 inf 1 0 0 0")
        with pytest.raises(errors.ZeroQuaternion):
            parse_poses("0 0 0 0 0 0 0")


class TestTables:
    def test_correspondence_round_trips(self, tmp_path, rng):
        for i in range(100):
            corrs = [Correspondence(*rng.uniform(0, 1000, 4)) for _ in range(rng.integers(1, 10))]
            d = rng.uniform(2, 60, (2, len(corrs))) if i % 2 else (None, None)
            write_correspondences(tmp_path / "c.csv", corrs, *d)
            back, d1, d2 = read_correspondences(tmp_path / "c.csv")
            assert back == corrs
            if i % 2:
                assert np.array_equal(d1, d[0]) and np.array_equal(d2, d[1])
            else:
                assert d1 is None and d2 is None

    def test_missing_columns(self, tmp_path):
        (tmp_path / "c.csv").write_text("a,b\n1,2\n")
        with pytest.raises(MalformedLine):
            read_correspondences(tmp_path / "c.csv")

    def test_depth_csv(self, tmp_path):
        write_depth_csv(tmp_path / "d.csv", [[1.5, np.nan]])
        assert (tmp_path / "d.csv").read_text().strip() == "1.5,"


class TestArrays:
    def test_distribution_round_trips(self, tmp_path, rng):
        for _ in range(100):
            h, w, n = rng.integers(1, 8, 3) + 1
            p = rng.random((h, w, n)).astype(np.float32)
            dist = DepthDistribution(p, rng.random((h, w)) > 0.3, DepthLevels(rng.uniform(1, 3), rng.uniform(0.1, 1), n))
            save_distribution(tmp_path / "d.npz", dist)
            back = load_distribution(tmp_path / "d.npz")
            assert np.array_equal(back.probs, p) and np.array_equal(back.valid, dist.valid)
            assert back.levels == dist.levels

    def test_distribution_bad_file(self, tmp_path):
        (tmp_path / "x.npz").write_bytes(b"nope")
        with pytest.raises(BadMagic):
            load_distribution(tmp_path / "x.npz")

    def test_voxel_round_trips(self, tmp_path, rng):
        spec = VoxelSpec((0.0, 1.0), (0.0, 0.6), (2.0, 3.0), 0.2)
        for _ in range(100):
            occ = rng.random(spec.shape) > 0.5
            vals = np.where(occ, rng.random(spec.shape).astype(np.float32), 0.0)
            write_voxel_grid(tmp_path / "g", VoxelGrid(vals, occ, spec))
            back = read_voxel_grid(tmp_path / "g")
            assert np.array_equal(back.values, vals) and np.array_equal(back.occupied, occ)
            assert back.spec == spec

    def test_voxel_truncated(self, tmp_path):
        spec = VoxelSpec((0.0, 1.0), (0.0, 0.6), (2.0, 3.0), 0.2)
        write_voxel_grid(tmp_path / "g", VoxelGrid(np.zeros(spec.shape), np.zeros(spec.shape, bool), spec))
        b = tmp_path / "g.bin"
        b.write_bytes(b.read_bytes()[:-1])
        with pytest.raises(TruncatedData):
            read_voxel_grid(tmp_path / "g")
