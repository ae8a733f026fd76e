"""Lifting frustum-space volumes into a metric voxel grid and bird's-eye view.

Voxel centres are expressed in the frame-t camera frame (x right, y down,
z forward), projected to pixel coordinates and converted to a fractional
depth-bin index; the frustum volume is then interpolated trilinearly in
``(u, v, bin)``. There are no learned features here, so what gets lifted
is the cost volume or the depth distribution itself.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import Intrinsics
from .plane_sweep import DepthDistribution, DepthLevels, FrustumVolume

BEV_MODES = ("max", "mean", "stack")


def _cells(lo: float, hi: float, edge: float, name: str) -> int:
    n = (hi - lo) / edge
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6:
        raise InputError(f"{name} range [{lo}, {hi}] is not a whole number of {edge} m cells")
    return k


@dataclass(frozen=True)
class VoxelSpec:
    """Axis-aligned grid in the camera frame; cells are cubes of side ``edge``."""

    x_range: tuple[float, float] = (-30.0, 30.0)
    y_range: tuple[float, float] = (-1.0, 3.0)
    z_range: tuple[float, float] = (2.0, 59.6)
    edge: float = 0.2

    def __post_init__(self):
        if not self.edge > 0:
            raise InputError("voxel edge must be positive")
        self.shape  # validates the ranges

    @property
    def shape(self) -> tuple[int, int, int]:
        """Cell counts ``(nx, ny, nz)``."""
        return (
            _cells(*self.x_range, self.edge, "x"),
            _cells(*self.y_range, self.edge, "y"),
            _cells(*self.z_range, self.edge, "z"),
        )

    def centers(self, axis: int) -> np.ndarray:
        lo = (self.x_range, self.y_range, self.z_range)[axis][0]
        return lo + (np.arange(self.shape[axis]) + 0.5) * self.edge

    def to_dict(self) -> dict:
        return {
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "z_range": list(self.z_range),
            "edge": self.edge,
            "shape": list(self.shape),
            "layout": "x, y, z",
        }

    @classmethod
    def from_dict(cls, d: dict) -> VoxelSpec:
        return cls(tuple(d["x_range"]), tuple(d["y_range"]), tuple(d["z_range"]), float(d["edge"]))


@dataclass(frozen=True)
class VoxelGrid:
    """Lifted values of shape (nx, ny, nz) with an occupancy mask.

    Unoccupied voxels hold 0.
    """

    values: np.ndarray
    occupied: np.ndarray
    spec: VoxelSpec

    def __post_init__(self):
        if self.values.shape != self.spec.shape or self.occupied.shape != self.spec.shape:
            raise InputError(f"grid arrays must have shape {self.spec.shape}")


def _frustum_arrays(vol) -> tuple[np.ndarray, np.ndarray, DepthLevels]:
    if isinstance(vol, FrustumVolume):
        return vol.values, vol.mask, vol.levels
    if isinstance(vol, DepthDistribution):
        return vol.probs, np.broadcast_to(vol.valid[..., None], vol.probs.shape), vol.levels
    raise InputError(f"cannot lift a {type(vol).__name__}")


def project_centers(cam: Intrinsics, levels: DepthLevels, spec: VoxelSpec, z_index: slice = slice(None)):
    """Fractional frustum coordinates ``(u, v, w)`` of voxel centres, each (nx, ny, nz')."""
    x = spec.centers(0)[:, None, None]
    y = spec.centers(1)[None, :, None]
    z = spec.centers(2)[z_index][None, None, :]
    u = cam.fx * x / z + cam.cu
    v = cam.fy * y / z + cam.cv
    w = (z - levels.d_min) / levels.step
    shape = np.broadcast_shapes(u.shape, v.shape, w.shape)
    return np.broadcast_to(u, shape), np.broadcast_to(v, shape), np.broadcast_to(w, shape)


def _lift_slab(values, mask, levels, cam, spec, zs: slice):
    h, w, n = values.shape
    u, v, k = project_centers(cam, levels, spec, zs)
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1) & (k >= 0) & (k <= n - 1)
    iu = np.where(inside, np.minimum(np.floor(u), w - 2), 0).astype(np.intp)
    iv = np.where(inside, np.minimum(np.floor(v), h - 2), 0).astype(np.intp)
    ik = np.where(inside, np.minimum(np.floor(k), n - 2), 0).astype(np.intp)
    fu = np.where(inside, u - iu, 0.0)
    fv = np.where(inside, v - iv, 0.0)
    fk = np.where(inside, k - ik, 0.0)
    out = np.zeros(u.shape)
    ok = inside.copy()
    for dv in (0, 1):
        wv = fv if dv else 1.0 - fv
        for du in (0, 1):
            wu = fu if du else 1.0 - fu
            for dk in (0, 1):
                wk = fk if dk else 1.0 - fk
                idx = (iv + dv, iu + du, ik + dk)
                ok &= mask[idx]
                out += (wv * wu * wk) * values[idx].astype(np.float64)
    return np.where(ok, out, 0.0), ok


def sample_voxels(vol, cam: Intrinsics, spec: VoxelSpec | None = None, threads: int = 1) -> VoxelGrid:
    """Trilinearly resample a frustum volume or distribution onto a voxel grid.

    A voxel is occupied iff its centre projects inside ``[0, W-1] x [0, H-1]``,
    its depth lies in ``[d_min, d_max]`` and the eight surrounding frustum
    samples are valid. Work is split across z-slabs when ``threads > 1``.
    """
    spec = spec or VoxelSpec()
    values, mask, levels = _frustum_arrays(vol)
    if values.shape[0] < 2 or values.shape[1] < 2:
        raise InputError("frustum volume must be at least 2x2 pixels")
    nz = spec.shape[2]
    out = np.zeros(spec.shape)
    occ = np.zeros(spec.shape, dtype=bool)
    chunk = max(1, math.ceil(nz / max(1, threads * 4)))
    slabs = [slice(s, min(s + chunk, nz)) for s in range(0, nz, chunk)]

    def run(zs: slice) -> None:
        out[:, :, zs], occ[:, :, zs] = _lift_slab(values, mask, levels, cam, spec, zs)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, slabs))
    else:
        for zs in slabs:
            run(zs)
    out.flags.writeable = False
    occ.flags.writeable = False
    return VoxelGrid(out, occ, spec)


def collapse_bev(grid: VoxelGrid, mode: str = "max") -> np.ndarray:
    """Reduce the height (y) axis.

    ``max`` and ``mean`` run over occupied voxels only and give an (nx, nz)
    map, 0 where a column is empty. ``stack`` returns the height slices as
    channels, shape (ny, nx, nz), with empty voxels as 0.
    """
    if mode not in BEV_MODES:
        raise InputError(f"unknown BEV mode {mode!r}; expected one of {BEV_MODES}")
    vals, occ = grid.values, grid.occupied
    if mode == "stack":
        return np.moveaxis(np.where(occ, vals, 0.0), 1, 0).copy()
    any_occ = occ.any(axis=1)
    if mode == "max":
        return np.where(any_occ, np.where(occ, vals, -np.inf).max(axis=1), 0.0)
    count = occ.sum(axis=1)
    total = np.where(occ, vals, 0.0).sum(axis=1)
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)
