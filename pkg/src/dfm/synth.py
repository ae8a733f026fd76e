"""Deterministic ray-cast renderer for synthetic ground truth.

Scenes hold textured planes and axis-aligned boxes in a world frame.
Intensity depends only on the surface point (Lambertian), so a surface
point looks the same from every viewpoint; depth is exact per pixel
centre. Used as the independent oracle for depth, pose and
correspondence checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .closed_form import Correspondence
from .errors import InputError, InsufficientVisibility
from .geometry import Intrinsics, RigidMotion, pixel_rays, project_points

Z_MAX = 200.0

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _hash2(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """splitmix64-style hash of lattice coordinates to [0, 1)."""
    with np.errstate(over="ignore"):
        h = ix.astype(np.int64).astype(np.uint64) * _M1
        h ^= iy.astype(np.int64).astype(np.uint64) * _M2 + np.uint64(seed & 0xFFFFFFFF) * _M3
        h ^= h >> np.uint64(30)
        h *= _M2
        h ^= h >> np.uint64(27)
        h *= _M3
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _smooth(t):
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class ValueNoise:
    """Smooth value noise; ``cell`` is the coarsest lattice spacing in metres."""

    seed: int = 0
    cell: float = 0.1
    octaves: int = 3
    lo: float = 0.05
    hi: float = 0.95

    def __call__(self, s, t):
        total = np.zeros(np.broadcast(s, t).shape)
        amp, norm = 1.0, 0.0
        for k in range(self.octaves):
            c = self.cell / 2**k
            x, y = s / c, t / c
            x0, y0 = np.floor(x), np.floor(y)
            fx, fy = _smooth(x - x0), _smooth(y - y0)
            sd = self.seed * 7919 + k
            n00 = _hash2(x0, y0, sd)
            n10 = _hash2(x0 + 1, y0, sd)
            n01 = _hash2(x0, y0 + 1, sd)
            n11 = _hash2(x0 + 1, y0 + 1, sd)
            top = n00 + (n10 - n00) * fx
            bot = n01 + (n11 - n01) * fx
            total += amp * (top + (bot - top) * fy)
            norm += amp
            amp *= 0.5
        return self.lo + (self.hi - self.lo) * total / norm


@dataclass(frozen=True)
class Checker:
    size: float = 0.5
    lo: float = 0.2
    hi: float = 0.8

    def __call__(self, s, t):
        parity = (np.floor(s / self.size) + np.floor(t / self.size)) % 2
        return np.where(parity == 0, self.lo, self.hi)


@dataclass(frozen=True)
class Constant:
    value: float = 0.5

    def __call__(self, s, t):
        return np.full(np.broadcast(s, t).shape, float(self.value))


Texture = Union[ValueNoise, Checker, Constant]


def _basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - normal * (helper @ normal)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


@dataclass(frozen=True)
class Plane:
    """Textured plane; ``extent`` bounds |s|, |t| in the plane basis (None = infinite)."""

    point: tuple
    normal: tuple
    texture: Texture = field(default_factory=ValueNoise)
    extent: tuple | None = None

    def _frame(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        return np.asarray(self.point, dtype=float), n, *_basis(n)

    def intersect(self, origin, dirs):
        p0, n, e1, e2 = self._frame()
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((p0 - origin) @ n) / denom
        hit = np.isfinite(lam) & (lam > 0)
        pts = origin + np.where(hit, lam, 0.0)[..., None] * dirs
        rel = pts - p0
        s, t = rel @ e1, rel @ e2
        if self.extent is not None:
            hit &= (np.abs(s) <= self.extent[0]) & (np.abs(t) <= self.extent[1])
        return np.where(hit, lam, np.inf), s, t

    def translated(self, offset) -> Plane:
        return Plane(tuple(np.asarray(self.point) + offset), self.normal, self.texture, self.extent)


def fronto_parallel_plane(z: float, texture: Texture | None = None, extent=None) -> Plane:
    """Plane ``Z = z`` facing a camera at the world origin."""
    return Plane((0.0, 0.0, z), (0.0, 0.0, -1.0), texture or ValueNoise(), extent)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; each face is textured in its own 2-D coordinates."""

    center: tuple
    size: tuple
    texture: Texture = field(default_factory=ValueNoise)

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, dtype=float)
        half = np.asarray(self.size, dtype=float) / 2.0
        lo, hi = c - half, c + half
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tmax >= tmin) & (tmin > 0)
        lam = np.where(hit, tmin, np.inf)
        pts = origin + np.where(hit, lam, 0.0)[..., None] * dirs
        # face axis = the axis whose entry plane produced tmin
        axis = np.argmax(np.minimum(t1, t2), axis=-1)
        rel = pts - lo
        s = np.choose(axis, [rel[..., 1], rel[..., 0], rel[..., 0]])
        t = np.choose(axis, [rel[..., 2], rel[..., 2], rel[..., 1]]) + 10.0 * axis
        return lam, s, t

    def translated(self, offset) -> Box:
        return Box(tuple(np.asarray(self.center) + offset), self.size, self.texture)


Primitive = Union[Plane, Box]


@dataclass(frozen=True)
class Scene:
    primitives: tuple = ()
    background: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def moved(self, index: int, offset) -> Scene:
        prims = list(self.primitives)
        prims[index] = prims[index].translated(np.asarray(offset, dtype=float))
        return Scene(tuple(prims), self.background)

    def cast(self, origin: np.ndarray, dirs: np.ndarray):
        """Nearest hit along each ray: ``(lam, intensity)``; lam = inf on miss."""
        best = np.full(dirs.shape[:-1], np.inf)
        color = np.full(dirs.shape[:-1], float(self.background))
        for prim in self.primitives:
            lam, s, t = prim.intersect(origin, dirs)
            closer = lam < best
            if closer.any():
                best = np.where(closer, lam, best)
                color = np.where(closer, prim.texture(s, t), color)
        return best, color

    @classmethod
    def from_dict(cls, data: dict) -> Scene:
        prims = []
        for item in data.get("primitives", []):
            tex = _texture_from_dict(item.get("texture", {"type": "noise"}))
            kind = item["type"]
            if kind == "plane":
                ext = item.get("extent")
                prims.append(Plane(tuple(item["point"]), tuple(item["normal"]), tex, tuple(ext) if ext else None))
            elif kind == "fronto_plane":
                ext = item.get("extent")
                prims.append(fronto_parallel_plane(item["z"], tex, tuple(ext) if ext else None))
            elif kind == "box":
                prims.append(Box(tuple(item["center"]), tuple(item["size"]), tex))
            else:
                raise InputError(f"unknown primitive type {kind!r}")
        return cls(tuple(prims), float(data.get("background", 0.0)))


def _texture_from_dict(d: dict) -> Texture:
    kind = d.get("type", "noise")
    args = {k: v for k, v in d.items() if k != "type"}
    if kind == "noise":
        return ValueNoise(**args)
    if kind == "checker":
        return Checker(**args)
    if kind == "constant":
        return Constant(**args)
    raise InputError(f"unknown texture type {kind!r}")


def _camera_rays(cam: Intrinsics, pose: RigidMotion, u, v):
    R = pose.R
    origin = -(R.T @ pose.t)
    rays_c = np.stack([(u - cam.cu) / cam.fx, (v - cam.cv) / cam.fy, np.ones_like(u)], axis=-1)
    return origin, rays_c @ R


def render(
    scene: Scene,
    cam: Intrinsics,
    pose: RigidMotion,
    size: tuple[int, int],
    supersample: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one view; ``pose`` maps world to camera coordinates.

    Returns ``(image, depth)``; depth is the camera z of the nearest hit at
    each pixel centre and NaN where nothing (within 200 m) is hit. With
    ``supersample`` the intensity averages a 2x2 sub-pixel pattern while
    the depth stays exact at the centre.
    """
    h, w = size
    rays = pixel_rays(cam, h, w)
    origin = -(pose.R.T @ pose.t)
    dirs = rays @ pose.R  # world directions with unit camera-z
    lam, img = scene.cast(origin, dirs)
    if supersample:
        acc = np.zeros_like(img)
        v, u = np.mgrid[0:h, 0:w].astype(float)
        for du, dv in ((-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)):
            _, d = _camera_rays(cam, pose, u + du, v + dv)
            acc += scene.cast(origin, d)[1]
        img = acc / 4.0
    depth = np.where(lam <= Z_MAX, lam, np.nan)
    return img, depth


def sample_correspondences(
    scene: Scene,
    cam: Intrinsics,
    pose_a: RigidMotion,
    pose_b: RigidMotion,
    n: int,
    size: tuple[int, int],
    seed: int = 0,
    rtol: float = 1e-9,
):
    """Exact correspondences for points visible in both views.

    Returns ``(corrs, depth_a, depth_b)``. Pixel locations are continuous
    (no rounding). A sample is kept when its projection in view b lies in
    the image, in front of the camera, and is not occluded there.
    """
    if n <= 0:
        raise InputError("n must be positive")
    h, w = size
    rng = np.random.default_rng(seed)
    m = 10 * n
    u = rng.uniform(0, w - 1, m)
    v = rng.uniform(0, h - 1, m)
    origin_a, dirs_a = _camera_rays(cam, pose_a, u, v)
    lam, _ = scene.cast(origin_a, dirs_a)
    hit = lam <= Z_MAX
    X = origin_a + np.where(hit, lam, 0.0)[:, None] * dirs_a
    ub, vb, zb = project_points(cam, pose_b.apply(X))
    if np.array_equal(pose_a.R, pose_b.R) and np.array_equal(pose_a.t, pose_b.t):
        ub, vb = u, v
    ok = hit & (zb > 0) & (ub >= 0) & (ub <= w - 1) & (vb >= 0) & (vb <= h - 1)
    origin_b, dirs_b = _camera_rays(cam, pose_b, np.where(ok, ub, 0.0), np.where(ok, vb, 0.0))
    lam_b, _ = scene.cast(origin_b, dirs_b)
    ok &= np.abs(lam_b - zb) <= rtol * np.abs(zb) + 1e-12
    idx = np.flatnonzero(ok)
    if idx.size < n:
        raise InsufficientVisibility(f"only {idx.size} of {n} co-visible points in {m} attempts")
    idx = idx[:n]
    corrs = [Correspondence(float(u[i]), float(v[i]), float(ub[i]), float(vb[i])) for i in idx]
    return corrs, lam[idx].copy(), zb[idx].copy()


def texture_variance(img: np.ndarray, size: int = 5) -> np.ndarray:
    """Local intensity variance over ``size`` windows, for 'textured' masks."""
    from scipy.ndimage import uniform_filter

    mu = uniform_filter(img, size, mode="nearest")
    return uniform_filter(img * img, size, mode="nearest") - mu * mu


def kitti_camera() -> Intrinsics:
    """Typical rectified KITTI left-colour camera (375 x 1242)."""
    return Intrinsics(721.5377, 721.5377, 609.5593, 172.854)


def lateral_motion(baseline: float) -> RigidMotion:
    """Frame-t -> previous-frame motion for a camera displaced by ``baseline`` in +x.

    A point at X in frame t appears at X - baseline in the previous frame,
    so the previous camera sits to the right of the current one.
    """
    return RigidMotion.identity().with_translation((-baseline, 0.0, 0.0))


def world_to_camera(position: Sequence[float], rotation=None) -> RigidMotion:
    """Pose mapping world points into a camera centred at ``position``."""
    from .geometry import UnitQuaternion

    q = rotation or UnitQuaternion.identity()
    R = q.to_matrix()
    return RigidMotion(q, tuple(-(R @ np.asarray(position, dtype=float))))


def relative_motion(pose_src: RigidMotion, pose_dst: RigidMotion) -> RigidMotion:
    """Camera-to-camera motion taking ``src``-frame points into ``dst`` frame."""
    return pose_dst.compose(pose_src.inverse())


def degrees(rad: float) -> float:
    return rad * 180.0 / math.pi
