"""Pinhole cameras, quaternions, rigid motions and the reprojection warp.

Conventions:
    - Camera frame: x right, y down, z forward; z is the depth.
    - ``RigidMotion`` maps points from a source camera frame into a target
      frame: ``p_target = R @ p_source + t``. For plane sweeping the source
      is the current frame t and the target is the previous frame t - dt.
    - Quaternions are Hamilton, scalar first ``(w, x, y, z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, InputError, NonPositiveDepth, ZeroQuaternion

_QUAT_EPS = 1e-15


class Pixel(NamedTuple):
    u: float
    v: float


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cu: float
    cv: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cu, self.cv)
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"non-finite intrinsics: {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_focal(cls, f: float, cu: float, cv: float) -> Intrinsics:
        return cls(f, f, cu, cv)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cu], [0.0, self.fy, self.cv], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cu / self.fx],
                [0.0, 1.0 / self.fy, -self.cv / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def scaled(self, s: float) -> Intrinsics:
        """Intrinsics after the pixel grid is scaled by ``s`` (u' = s * u)."""
        return Intrinsics(self.fx * s, self.fy * s, self.cu * s, self.cv * s)

    def shifted(self, du: float, dv: float) -> Intrinsics:
        """Intrinsics after the image origin moves to ``(du, dv)`` (a crop)."""
        return Intrinsics(self.fx, self.fy, self.cu - du, self.cv - dv)

    def pyramid_down(self) -> Intrinsics:
        """Intrinsics of a 2x2 box-downsampled image (pixel centres preserved)."""
        return Intrinsics(
            self.fx / 2.0, self.fy / 2.0, (self.cu + 0.5) / 2.0 - 0.5, (self.cv + 0.5) / 2.0 - 0.5
        )


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation quaternion; normalised on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not n >= _QUAT_EPS:
            raise ZeroQuaternion(f"quaternion norm {n} too small to normalise")
        if n != 1.0:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def identity(cls) -> UnitQuaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q) -> UnitQuaternion:
        w, x, y, z = (float(c) for c in q)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> UnitQuaternion:
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            return cls.identity()
        axis = axis / n
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_rotvec(cls, rv) -> UnitQuaternion:
        rv = np.asarray(rv, dtype=float)
        theta = float(np.linalg.norm(rv))
        if theta < 1e-8:
            # second-order series keeps exp/log consistent near zero
            half = 0.5 * rv
            return cls(1.0 - theta**2 / 8.0, half[0], half[1], half[2])
        return cls.from_axis_angle(rv, theta)

    @classmethod
    def from_matrix(cls, R) -> UnitQuaternion:
        R = np.asarray(R, dtype=float)
        tr = R[0, 0] + R[1, 1] + R[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2.0
            return cls(0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
        if R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            return cls((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
        if R[1, 1] > R[2, 2]:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            return cls((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        return cls((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)

    @classmethod
    def from_euler_zyx(cls, yaw: float, pitch: float, roll: float) -> UnitQuaternion:
        """Rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; for I/O only."""
        qz = cls.from_axis_angle((0, 0, 1), yaw)
        qy = cls.from_axis_angle((0, 1, 0), pitch)
        qx = cls.from_axis_angle((1, 0, 0), roll)
        return qz * qy * qx

    def to_euler_zyx(self) -> tuple[float, float, float]:
        R = self.to_matrix()
        pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
        return yaw, pitch, roll

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __mul__(self, other: UnitQuaternion) -> UnitQuaternion:
        a, b = self, other
        return UnitQuaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def conjugate(self) -> UnitQuaternion:
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def to_rotvec(self) -> np.ndarray:
        w, v = self.w, np.array([self.x, self.y, self.z])
        if w < 0:
            w, v = -w, -v
        s = float(np.linalg.norm(v))
        if s < 1e-12:
            return 2.0 * v
        return 2.0 * math.atan2(s, w) * v / s

    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        s = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        return 2.0 * math.atan2(s, abs(self.w))


def quat_to_matrix(q: UnitQuaternion) -> np.ndarray:
    return q.to_matrix()


def _skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


@dataclass(frozen=True)
class RigidMotion:
    """SE(3) element ``p -> R p + t`` with quaternion rotation."""

    rotation: UnitQuaternion
    translation: tuple[float, float, float]

    def __post_init__(self):
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3 or not all(math.isfinite(c) for c in t):
            raise InputError(f"translation must be 3 finite values, got {self.translation!r}")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidMotion:
        return cls(UnitQuaternion.identity(), (0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, R, t) -> RigidMotion:
        return cls(UnitQuaternion.from_matrix(R), tuple(np.asarray(t, dtype=float)))

    @classmethod
    def from_matrix4(cls, T) -> RigidMotion:
        T = np.asarray(T, dtype=float)
        return cls.from_matrix(T[:3, :3], T[:3, 3])

    @classmethod
    def exp(cls, xi) -> RigidMotion:
        """SE(3) exponential of the tangent vector ``(rho, omega)``."""
        xi = np.asarray(xi, dtype=float)
        rho, omega = xi[:3], xi[3:]
        theta = float(np.linalg.norm(omega))
        W = _skew(omega)
        if theta < 1e-8:
            V = np.eye(3) + 0.5 * W + W @ W / 6.0
        else:
            V = (
                np.eye(3)
                + (1.0 - math.cos(theta)) / theta**2 * W
                + (theta - math.sin(theta)) / theta**3 * (W @ W)
            )
        return cls(UnitQuaternion.from_rotvec(omega), tuple(V @ rho))

    def log(self) -> np.ndarray:
        omega = self.rotation.to_rotvec()
        theta = float(np.linalg.norm(omega))
        W = _skew(omega)
        if theta < 1e-8:
            V_inv = np.eye(3) - 0.5 * W + W @ W / 12.0
        else:
            half = theta / 2.0
            V_inv = np.eye(3) - 0.5 * W + (1.0 - half / math.tan(half)) / theta**2 * (W @ W)
        return np.concatenate([V_inv @ np.asarray(self.translation), omega])

    @property
    def R(self) -> np.ndarray:
        return self.rotation.to_matrix()

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation)

    def as_matrix4(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def compose(self, other: RigidMotion) -> RigidMotion:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidMotion(self.rotation * other.rotation, tuple(self.R @ other.t + self.t))

    def __matmul__(self, other: RigidMotion) -> RigidMotion:
        return self.compose(other)

    def inverse(self) -> RigidMotion:
        q_inv = self.rotation.conjugate()
        return RigidMotion(q_inv, tuple(-(q_inv.to_matrix() @ self.t)))

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.t

    @property
    def is_identity(self) -> bool:
        q = self.rotation
        return q.w == 1.0 and q.x == q.y == q.z == 0.0 and self.translation == (0.0, 0.0, 0.0)

    def with_translation(self, t) -> RigidMotion:
        return RigidMotion(self.rotation, tuple(t))


def compose(a: RigidMotion, b: RigidMotion) -> RigidMotion:
    return a.compose(b)


def invert(a: RigidMotion) -> RigidMotion:
    return a.inverse()


def project(cam: Intrinsics, p) -> tuple[Pixel, float]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise NonPositiveDepth(f"cannot project point with z={z}")
    return Pixel(cam.fx * x / z + cam.cu, cam.fy * y / z + cam.cv), z


def backproject(cam: Intrinsics, px, d: float) -> Point3:
    if not d > 0:
        raise NonPositiveDepth(f"cannot backproject with depth {d}")
    u, v = px
    return Point3((u - cam.cu) / cam.fx * d, (v - cam.cv) / cam.fy * d, float(d))


def warp_pixel(cam: Intrinsics, T: RigidMotion, px, d: float) -> tuple[Pixel, float]:
    """Map a pixel with depth through ``T``; the composite K T K^-1 in homogeneous form.

    The identity motion returns its input unchanged (no round-off).
    """
    if T.is_identity:
        if not d > 0:
            raise NonPositiveDepth(f"cannot backproject with depth {d}")
        return Pixel(float(px[0]), float(px[1])), float(d)
    p = T.apply(np.asarray(backproject(cam, px, d)))
    if not p[2] > 0:
        raise BehindCamera(f"warped point has z={p[2]}")
    return project(cam, p)


def project_points(cam: Intrinsics, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection; returns ``u, v, z`` without depth checks."""
    pts = np.asarray(pts, dtype=float)
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pts[..., 0] / z + cam.cu
        v = cam.fy * pts[..., 1] / z + cam.cv
    return u, v, z


def backproject_pixels(cam: Intrinsics, u, v, d) -> np.ndarray:
    """Vectorised backprojection to an array of shape (..., 3)."""
    u, v, d = np.broadcast_arrays(
        np.asarray(u, dtype=float), np.asarray(v, dtype=float), np.asarray(d, dtype=float)
    )
    return np.stack([(u - cam.cu) / cam.fx * d, (v - cam.cv) / cam.fy * d, d], axis=-1)


def pixel_rays(cam: Intrinsics, height: int, width: int) -> np.ndarray:
    """Rays with unit z through every integer pixel centre, shape (H, W, 3)."""
    v, u = np.mgrid[0:height, 0:width].astype(float)
    return backproject_pixels(cam, u, v, 1.0)


def warp_coords(
    cam: Intrinsics,
    T: RigidMotion,
    u,
    v,
    d,
    cam_dst: Intrinsics | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``warp_pixel``; returns ``u', v', z'`` (z' <= 0 means behind).

    ``cam_dst`` defaults to ``cam`` (intrinsics shared by both frames).
    """
    pts = T.apply(backproject_pixels(cam, u, v, d))
    return project_points(cam if cam_dst is None else cam_dst, pts)
