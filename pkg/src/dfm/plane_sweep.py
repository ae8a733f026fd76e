"""Plane-sweep cost volumes over discrete depth levels.

For every pixel of frame t and every candidate depth ``d(w) = w * step +
d_min`` the pixel is lifted to 3D, moved into the previous frame with the
ego-motion and projected; the previous image is sampled bilinearly there
and compared with the frame-t patch. Costs become a per-pixel depth
distribution through a softmax over the valid levels.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import InputError
from .geometry import Intrinsics, RigidMotion, pixel_rays
from .imaging import (
    all_valid_in_window,
    as_image,
    bilinear_sample,
    box_mean,
    check_same_size,
)

logger = logging.getLogger(__name__)

COST_KINDS = ("zncc", "sad", "ssd")
# bin layout recorded in every output's metadata
BIN_CONVENTION = "depth-uniform, endpoints inclusive"

# A warp maps a frame-t depth (scalar or HxW map) to previous-frame pixel
# coordinates ``(u, v, z)``; z <= 0 marks points behind the camera.
Warp = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class DepthLevels:
    """Uniform depth bins ``d(w) = w * step + d_min`` for ``w in [0, count)``."""

    d_min: float
    step: float
    count: int

    def __post_init__(self):
        if not self.d_min > 0:
            raise InputError(f"d_min must be positive, got {self.d_min}")
        if not self.step > 0:
            raise InputError(f"depth step must be positive, got {self.step}")
        if int(self.count) != self.count or self.count < 2:
            raise InputError(f"need at least 2 depth levels, got {self.count}")

    @classmethod
    def from_range(cls, d_min: float, d_max: float, count: int) -> DepthLevels:
        """Bins spanning ``[d_min, d_max]`` with both endpoints included."""
        if count < 2:
            raise InputError(f"need at least 2 depth levels, got {count}")
        return cls(d_min, (d_max - d_min) / (count - 1), int(count))

    @classmethod
    def default(cls) -> DepthLevels:
        return cls.from_range(2.0, 59.6, 288)

    @property
    def d_max(self) -> float:
        return self.d_min + (self.count - 1) * self.step

    @property
    def depths(self) -> np.ndarray:
        return np.arange(self.count) * self.step + self.d_min

    def depth(self, w):
        return np.asarray(w) * self.step + self.d_min

    def fractional_index(self, d):
        return (np.asarray(d, dtype=float) - self.d_min) / self.step

    def to_dict(self) -> dict:
        return {
            "d_min": self.d_min,
            "d_max": self.d_max,
            "step": self.step,
            "count": self.count,
            "convention": BIN_CONVENTION,
        }


class FrustumGrid(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray


def build_frustum_grid(cam: Intrinsics, size: tuple[int, int], levels: DepthLevels) -> FrustumGrid:
    """One ``(u, v, d)`` sample per pixel and level, each array (H, W, L).

    The arrays are read-only broadcast views; no H*W*L memory is used.
    """
    h, w = size
    shape = (h, w, levels.count)
    u = np.broadcast_to(np.arange(w, dtype=float)[None, :, None], shape)
    v = np.broadcast_to(np.arange(h, dtype=float)[:, None, None], shape)
    d = np.broadcast_to(levels.depths[None, None, :], shape)
    return FrustumGrid(u, v, d)


@dataclass(frozen=True)
class SweepWarp:
    """Default warp: lift with ``cam``, apply ``motion``, project with ``cam_prev``."""

    cam: Intrinsics
    motion: RigidMotion
    height: int
    width: int
    cam_prev: Intrinsics | None = None
    _rays: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rays = pixel_rays(self.cam, self.height, self.width) @ self.motion.R.T
        object.__setattr__(self, "_rays", rays)

    def __call__(self, depth):
        depth = np.asarray(depth, dtype=float)
        cam = self.cam if self.cam_prev is None else self.cam_prev
        if self.motion.is_identity and cam == self.cam:
            # exact pixel grid, so self-matching costs are exactly zero
            v, u = np.mgrid[0 : self.height, 0 : self.width].astype(float)
            return u, v, np.broadcast_to(depth, u.shape).copy()
        t = self.motion.t
        x = self._rays[..., 0] * depth + t[0]
        y = self._rays[..., 1] * depth + t[1]
        z = self._rays[..., 2] * depth + t[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = cam.fx * x / z + cam.cu
            v = cam.fy * y / z + cam.cv
        return u, v, z


@dataclass(frozen=True)
class FrustumVolume:
    """Per-pixel, per-level values on the frame-t grid, shape (H, W, L)."""

    values: np.ndarray
    mask: np.ndarray
    levels: DepthLevels
    cost_kind: str = "zncc"
    warp: Warp | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape != self.mask.shape:
            raise InputError(f"values {self.values.shape} and mask {self.mask.shape} must match (H, W, L)")
        if self.values.shape[2] != self.levels.count:
            raise InputError(f"volume has {self.values.shape[2]} levels, expected {self.levels.count}")
        self.values.flags.writeable = False
        self.mask.flags.writeable = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def mask_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class DepthDistribution:
    """Per-pixel probabilities over depth levels; ``valid`` is (H, W)."""

    probs: np.ndarray
    valid: np.ndarray
    levels: DepthLevels

    def __post_init__(self):
        if self.probs.ndim != 3 or self.probs.shape[:2] != self.valid.shape:
            raise InputError(f"probs {self.probs.shape} and valid {self.valid.shape} do not match")
        if self.probs.shape[2] != self.levels.count:
            raise InputError(f"distribution has {self.probs.shape[2]} levels, expected {self.levels.count}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def _level_cost(a, a_mu, a_var, sample, valid_a, patch, kind, var_eps):
    b, ok = sample
    ok = all_valid_in_window(ok, patch) & valid_a
    if kind == "zncc":
        b_mu = box_mean(b, patch)
        b_var = box_mean(b * b, patch) - b_mu * b_mu
        cov = box_mean(a * b, patch) - a_mu * b_mu
        textured = (a_var > var_eps) & (b_var > var_eps)
        denom = np.sqrt(np.where(textured, a_var * b_var, np.float32(1.0)))
        cost = np.float32(1.0) - np.where(textured, cov / denom, np.float32(0.0))
    elif kind == "sad":
        cost = box_mean(np.abs(a - b), patch)
    else:
        diff = a - b
        cost = box_mean(diff * diff, patch)
    return cost, ok


def compute_cost_volume(
    img_t,
    img_prev,
    cam: Intrinsics,
    motion: RigidMotion,
    levels: DepthLevels,
    cost_kind: str = "zncc",
    patch: int = 5,
    warp: Warp | None = None,
    threads: int = 1,
    var_eps: float = 1e-6,
) -> FrustumVolume:
    """Build the matching-cost volume anchored at frame t.

    ``motion`` maps frame-t camera coordinates into the previous frame. A
    custom ``warp`` (e.g. the canonical-space warp for augmented inputs)
    replaces the default lift-transform-project map. The cost is
    ``1 - ZNCC`` over ``patch x patch`` windows (or mean SAD / SSD).
    Samples whose warped patch leaves the previous image, lies behind the
    camera, or whose frame-t patch crosses the border are masked out.

    Levels are filled in disjoint slices, optionally on ``threads`` workers.
    """
    if cost_kind not in COST_KINDS:
        raise InputError(f"unknown cost kind {cost_kind!r}; expected one of {COST_KINDS}")
    if patch < 1 or patch % 2 == 0:
        raise InputError(f"patch size must be odd and positive, got {patch}")
    a = as_image(img_t)
    b_img = as_image(img_prev)
    check_same_size(a, b_img)
    h, w = a.shape
    if warp is None:
        warp = SweepWarp(cam, motion, h, w)

    r = patch // 2
    valid_a = np.zeros((h, w), dtype=bool)
    valid_a[r : h - r, r : w - r] = True
    a32 = a.astype(np.float32)
    a_mu = box_mean(a, patch)
    a_var = (box_mean(a * a, patch) - a_mu * a_mu).astype(np.float32)
    a_mu = a_mu.astype(np.float32)

    # level-major storage so each level is one contiguous write
    values = np.empty((levels.count, h, w), dtype=np.float32)
    mask = np.empty((levels.count, h, w), dtype=bool)
    depths = levels.depths

    def fill(k: int) -> None:
        u, v, z = warp(depths[k])
        vals, ok = bilinear_sample(b_img, u, v)
        ok &= z > 0
        cost, ok = _level_cost(a32, a_mu, a_var, (vals.astype(np.float32), ok), valid_a, patch, cost_kind, var_eps)
        cost *= ok
        values[k] = cost
        mask[k] = ok

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(fill, range(levels.count)))
    else:
        for k in range(levels.count):
            fill(k)
    logger.debug("cost volume %s: mask fraction %.3f", values.shape, mask.mean())
    return FrustumVolume(np.moveaxis(values, 0, 2), np.moveaxis(mask, 0, 2), levels, cost_kind, warp)


def cost_to_distribution(vol: FrustumVolume, temperature: float = 0.1, rows: int = 32) -> DepthDistribution:
    """Softmax of ``-cost / temperature`` over each pixel's valid levels.

    Masked levels get probability 0; pixels with no valid level are marked
    invalid and carry all-zero probabilities.
    """
    if not temperature > 0:
        raise InputError(f"temperature must be positive, got {temperature}")
    h, w, n = vol.values.shape
    probs = np.zeros((h, w, n), dtype=np.float64)
    valid = vol.mask.any(axis=2)
    for r0 in range(0, h, rows):
        sl = slice(r0, min(r0 + rows, h))
        m = vol.mask[sl]
        logits = np.where(m, -vol.values[sl].astype(np.float64) / temperature, -np.inf)
        top = logits.max(axis=2, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.exp(logits - top)
        s = e.sum(axis=2, keepdims=True)
        probs[sl] = np.divide(e, s, out=np.zeros_like(e), where=s > 0)
    return DepthDistribution(probs, valid, vol.levels)


def distribution_to_depth(dist: DepthDistribution, mode: str = "argmax", refine: bool = True) -> np.ndarray:
    """Collapse a distribution to a depth map (NaN where invalid).

    ``argmax`` returns the peak level's depth, optionally refined by a
    3-point parabola through the neighbouring probabilities (offset clipped
    to half a bin). ``expectation`` returns ``sum_w p(w) d(w)``.
    """
    levels = dist.levels
    h, w, n = dist.probs.shape
    if mode == "expectation":
        depth = (dist.probs.reshape(-1, n) @ levels.depths).reshape(h, w)
    elif mode == "argmax":
        k = dist.probs.argmax(axis=2)
        offset = np.zeros((h, w))
        if refine:
            km = np.clip(k - 1, 0, n - 1)
            kp = np.clip(k + 1, 0, n - 1)
            take = lambda idx: np.take_along_axis(dist.probs, idx[..., None], axis=2)[..., 0]  # noqa: E731
            pm, p0, pp = take(km), take(k), take(kp)
            curv = pm - 2.0 * p0 + pp
            interior = (k > 0) & (k < n - 1) & (curv < 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                off = 0.5 * (pm - pp) / curv
            offset = np.where(interior, np.clip(off, -0.5, 0.5), 0.0)
        depth = levels.depth(k + offset)
    else:
        raise InputError(f"unknown mode {mode!r}; expected 'argmax' or 'expectation'")
    return np.where(dist.valid, depth, np.nan)


def estimate_depth(
    img_t,
    img_prev,
    cam: Intrinsics,
    motion: RigidMotion,
    levels: DepthLevels | None = None,
    cost_kind: str = "zncc",
    temperature: float = 0.1,
    mode: str = "argmax",
    warp: Warp | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, FrustumVolume, DepthDistribution]:
    """Cost volume -> distribution -> depth map in one call."""
    levels = levels or DepthLevels.default()
    vol = compute_cost_volume(img_t, img_prev, cam, motion, levels, cost_kind, warp=warp, threads=threads)
    dist = cost_to_distribution(vol, temperature)
    return distribution_to_depth(dist, mode), vol, dist

