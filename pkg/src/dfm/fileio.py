"""Readers and writers for calibration, images, depth maps, poses and volumes.

Formats:
    calibration  KITTI-style ``Pk: v00 ... v23`` text; only rectified
                 projection matrices (``K [I | t]``) are accepted.
    depth        PFM, little-endian (scale -1.0), written bit-exactly.
    images       binary PGM (P5) / PPM (P6), maxval 255. Floats in [0, 1]
                 map to bytes by ``floor(255 x + 0.5)`` after clipping.
    poses        one ``tx ty tz qw qx qy qz`` line per frame, ``#`` comments.
    volumes      ``.npz`` for depth distributions; raw float32 + JSON
                 header for voxel grids.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closed_form import Correspondence
from .errors import BadMagic, InputError, MalformedLine, MissingCamera, TruncatedData
from .geometry import Intrinsics, RigidMotion, UnitQuaternion
from .plane_sweep import DepthDistribution, DepthLevels
from .voxel import VoxelGrid, VoxelSpec

PROJECTION_KEY = re.compile(r"^P(?:_rect_)?(\d+)$")
TEXT_KEYS = frozenset({"calib_time"})
RECTIFIED_TOL = 1e-9


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class CalibrationRecord:
    """One rectified camera: id, 3x4 projection matrix and its intrinsics.

    ``baseline_tx`` is ``-P03 / P00``, the camera's x offset from the
    reference camera in metres.
    """

    camera_id: str
    P: np.ndarray
    intrinsics: Intrinsics
    baseline_tx: float


def _record_from_matrix(key: str, P: np.ndarray, line: int) -> CalibrationRecord:
    if not P[0, 0] > 0:
        raise MalformedLine(line, "nonpositive_fx", f"{key}: P00 = {P[0, 0]}")
    if not P[1, 1] > 0:
        raise MalformedLine(line, "nonpositive_fy", f"{key}: P11 = {P[1, 1]}")
    off = (P[0, 1], P[1, 0], P[2, 0], P[2, 1], P[2, 2] - 1.0)
    if any(abs(x) > RECTIFIED_TOL for x in off):
        raise MalformedLine(line, "not_rectified", f"{key} is not of the form K [I | t] with zero skew")
    cam = Intrinsics(float(P[0, 0]), float(P[1, 1]), float(P[0, 2]), float(P[1, 2]))
    return CalibrationRecord(key, P, cam, float(-P[0, 3] / P[0, 0]))


def parse_calibration(text: str) -> list[CalibrationRecord]:
    """Parse calibration text into one record per projection matrix.

    Lines are ``key: numbers``; blank lines and ``#`` comments are skipped.
    Non-projection keys (``R0_rect``, ``Tr_velo_to_cam``...) must still be
    numeric but are otherwise ignored.

    Raises:
        MalformedLine: with ``reason`` one of ``missing_colon``,
            ``empty_key``, ``duplicate_key``, ``non_numeric``,
            ``non_finite``, ``wrong_count``, ``nonpositive_fx``,
            ``nonpositive_fy``, ``not_rectified``.
        MissingCamera: no projection matrix in the text.
    """
    records = []
    seen = set()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise MalformedLine(no, "missing_colon", raw.strip())
        key, rest = line.split(":", 1)
        key = key.strip()
        if not key:
            raise MalformedLine(no, "empty_key")
        if key in seen:
            raise MalformedLine(no, "duplicate_key", key)
        seen.add(key)
        if key in TEXT_KEYS:
            continue
        values = []
        for pos, tok in enumerate(rest.split(), start=1):
            try:
                x = float(tok)
            except ValueError:
                raise MalformedLine(no, "non_numeric", f"token {pos} {tok!r}") from None
            if not math.isfinite(x):
                raise MalformedLine(no, "non_finite", f"token {pos} {tok!r}")
            values.append(x)
        if PROJECTION_KEY.match(key):
            if len(values) != 12:
                raise MalformedLine(no, "wrong_count", f"{key} has {len(values)} values, expected 12")
            records.append(_record_from_matrix(key, np.array(values).reshape(3, 4), no))
        elif not values:
            raise MalformedLine(no, "wrong_count", f"{key} has no values")
    if not records:
        raise MissingCamera("no projection matrix found")
    return records


def find_camera(records: list[CalibrationRecord], camera: str | None = None) -> CalibrationRecord:
    """The record named ``camera`` (``P2`` style or bare index), else ``P2``, else the first."""

    def index(r: CalibrationRecord) -> int:
        return int(PROJECTION_KEY.match(r.camera_id).group(1))

    if camera is None:
        for r in records:
            if index(r) == 2:
                return r
        return records[0]
    want = camera.lstrip("P").removeprefix("_rect_")
    for r in records:
        if r.camera_id == camera or (want.isdigit() and index(r) == int(want)):
            return r
    raise MissingCamera(f"camera {camera!r} not in calibration ({[r.camera_id for r in records]})")


def read_calibration(path, camera: str | None = None) -> CalibrationRecord:
    return find_camera(parse_calibration(Path(path).read_text()), camera)


# ---------------------------------------------------------------- PFM


def _read_header_lines(buf: io.BufferedIOBase, n: int) -> list[bytes]:
    lines = []
    while len(lines) < n:
        line = buf.readline()
        if not line:
            raise TruncatedData("header ended early")
        line = line.strip()
        if line and not line.startswith(b"#"):
            lines.append(line)
    return lines


def write_pfm(path, data) -> None:
    """Write an (H, W) or (H, W, 3) float map; rows are stored bottom-up."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise InputError(f"PFM holds (H, W) or (H, W, 3) arrays, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into float32, top row first.

    Raises:
        BadMagic: not a PFM header.
        TruncatedData: fewer pixels than the header declares.
    """
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise BadMagic(f"{path}: expected Pf/PF, got {magic[:8]!r}")
        try:
            dims, scale_line = _read_header_lines(f, 2)
            w, h = (int(x) for x in dims.split())
            scale = float(scale_line)
        except ValueError as exc:
            raise BadMagic(f"{path}: malformed PFM header ({exc})") from None
        if w <= 0 or h <= 0 or scale == 0:
            raise BadMagic(f"{path}: invalid PFM size {w}x{h} or scale {scale}")
        ch = 3 if magic == b"PF" else 1
        count = w * h * ch
        raw = f.read(4 * count)
    if len(raw) < 4 * count:
        raise TruncatedData(f"{path}: {len(raw)} of {4 * count} bytes")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return arr.reshape(shape)[::-1].copy()


# ---------------------------------------------------------------- PGM / PPM


def to_bytes(img) -> np.ndarray:
    """[0, 1] floats to 8-bit with round-half-up; NaN maps to 0."""
    x = np.nan_to_num(np.asarray(img, dtype=np.float64), nan=0.0)
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pnm(path, img) -> None:
    """Write a float image in [0, 1] as PGM (H, W) or PPM (H, W, 3)."""
    data = np.asarray(img)
    raw = data if data.dtype == np.uint8 else to_bytes(data)
    if raw.ndim == 2:
        magic = b"P5"
    elif raw.ndim == 3 and raw.shape[2] == 3:
        magic = b"P6"
    else:
        raise InputError(f"PGM/PPM holds (H, W) or (H, W, 3) images, got {raw.shape}")
    h, w = raw.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(raw).tobytes())


def _pnm_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise TruncatedData(f"{path}: header ended early")
        tokens.append(data[start:pos])
        if tokens[0] not in (b"P5", b"P6"):
            raise BadMagic(f"{path}: expected P5/P6, got {tokens[0][:8]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise BadMagic(f"{path}: malformed header {tokens!r}") from None
    if maxval != 255:
        raise BadMagic(f"{path}: maxval {maxval} unsupported (only 255)")
    if w <= 0 or h <= 0:
        raise BadMagic(f"{path}: invalid size {w}x{h}")
    # exactly one whitespace byte separates the header from the raster
    return tokens[0], w, h, maxval, pos + 1


def read_pnm(path, raw: bool = False) -> np.ndarray:
    """Read binary PGM/PPM; floats in [0, 1] unless ``raw`` (uint8).

    Raises:
        BadMagic: not P5/P6, or maxval other than 255.
        TruncatedData: raster shorter than the header declares.
    """
    data = Path(path).read_bytes()
    magic, w, h, _, start = _pnm_header(data, path)
    ch = 3 if magic == b"P6" else 1
    n = w * h * ch
    body = data[start : start + n]
    if len(body) < n:
        raise TruncatedData(f"{path}: {len(body)} of {n} raster bytes")
    arr = np.frombuffer(body, dtype=np.uint8).reshape((h, w, 3) if ch == 3 else (h, w))
    return arr.copy() if raw else arr / 255.0


def read_gray(path) -> np.ndarray:
    """Grayscale float image from PGM/PPM (colour is averaged) or PFM."""
    p = Path(path)
    with open(p, "rb") as f:
        magic = f.read(2)
    img = read_pfm(p).astype(np.float64) if magic in (b"Pf", b"PF") else read_pnm(p)
    return img.mean(axis=2) if img.ndim == 3 else img


# ---------------------------------------------------------------- poses


def motion_to_line(T: RigidMotion) -> str:
    q = T.rotation.as_array()
    return " ".join(repr(float(x)) for x in (*T.t, *q))


def parse_poses(text: str) -> list[RigidMotion]:
    """One ``tx ty tz qw qx qy qz`` per non-comment line."""
    poses = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.replace(",", " ").split()
        if len(toks) != 7:
            raise MalformedLine(no, "wrong_count", f"{len(toks)} values, expected 7")
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise MalformedLine(no, "non_numeric", line) from None
        if not all(math.isfinite(v) for v in vals):
            raise MalformedLine(no, "non_finite", line)
        poses.append(RigidMotion(UnitQuaternion(*vals[3:]), tuple(vals[:3])))
    return poses


def read_poses(path) -> list[RigidMotion]:
    return parse_poses(Path(path).read_text())


def write_poses(path, poses) -> None:
    lines = ["# tx ty tz qw qx qy qz"] + [motion_to_line(T) for T in poses]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- correspondences


CORR_FIELDS = ("u1", "v1", "u2", "v2")


def write_correspondences(path, corrs, depth_a=None, depth_b=None) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        extra = depth_a is not None
        wr.writerow(CORR_FIELDS + (("d1", "d2") if extra else ()))
        for i, c in enumerate(corrs):
            row = [repr(float(x)) for x in c]
            if extra:
                row += [repr(float(depth_a[i])), repr(float(depth_b[i]))]
            wr.writerow(row)


def read_correspondences(path) -> tuple[list[Correspondence], np.ndarray | None, np.ndarray | None]:
    """Correspondences and, when present, the ``d1``/``d2`` columns."""
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        if rd.fieldnames is None or not set(CORR_FIELDS) <= set(rd.fieldnames):
            raise MalformedLine(1, "missing_columns", f"need {CORR_FIELDS}")
        corrs, d1, d2 = [], [], []
        has_d = {"d1", "d2"} <= set(rd.fieldnames)
        for no, row in enumerate(rd, start=2):
            try:
                corrs.append(Correspondence(*(float(row[k]) for k in CORR_FIELDS)))
                if has_d:
                    d1.append(float(row["d1"]))
                    d2.append(float(row["d2"]))
            except (TypeError, ValueError):
                raise MalformedLine(no, "non_numeric", str(row)) from None
    if has_d:
        return corrs, np.array(d1), np.array(d2)
    return corrs, None, None


# ---------------------------------------------------------------- volumes


def save_distribution(path, dist: DepthDistribution) -> None:
    lv = dist.levels
    with open(path, "wb") as f:
        np.savez_compressed(
            f,
            probs=dist.probs.astype(np.float32),
            valid=dist.valid,
            levels=np.array([lv.d_min, lv.step, lv.count], dtype=np.float64),
        )


def load_distribution(path) -> DepthDistribution:
    try:
        with np.load(path) as z:
            probs, valid, lv = z["probs"], z["valid"], z["levels"]
    except (KeyError, ValueError, OSError) as exc:
        raise BadMagic(f"{path}: not a depth distribution archive ({exc})") from None
    return DepthDistribution(probs, valid.astype(bool), DepthLevels(float(lv[0]), float(lv[1]), int(lv[2])))


def write_voxel_grid(prefix, grid: VoxelGrid) -> tuple[Path, Path]:
    """``<prefix>.bin`` (float32 values then uint8 occupancy, C order) and ``<prefix>.json``."""
    prefix = Path(prefix)
    bin_path = prefix.with_suffix(".bin")
    json_path = prefix.with_suffix(".json")
    with open(bin_path, "wb") as f:
        f.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(grid.occupied, dtype=np.uint8).tobytes())
    header = {**grid.spec.to_dict(), "dtype": "float32 little-endian, then uint8 occupancy", "order": "C"}
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    return bin_path, json_path


def read_voxel_grid(prefix) -> VoxelGrid:
    prefix = Path(prefix)
    spec = VoxelSpec.from_dict(json.loads(prefix.with_suffix(".json").read_text()))
    n = int(np.prod(spec.shape))
    raw = prefix.with_suffix(".bin").read_bytes()
    if len(raw) < 5 * n:
        raise TruncatedData(f"{prefix}.bin: {len(raw)} of {5 * n} bytes")
    vals = np.frombuffer(raw[: 4 * n], dtype="<f4").reshape(spec.shape).astype(np.float64)
    occ = np.frombuffer(raw[4 * n : 5 * n], dtype=np.uint8).reshape(spec.shape).astype(bool)
    return VoxelGrid(vals, occ, spec)


def write_depth_csv(path, depth) -> None:
    """Depth map as CSV rows for spreadsheet inspection; NaN cells are empty."""
    d = np.asarray(depth, dtype=float)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        for row in d:
            wr.writerow(["" if not math.isfinite(x) else repr(float(x)) for x in row])


def write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
