"""Monocular/stereo fusion of depth distributions and depth supervision.

The stereo distribution comes from the plane-sweep cost volume. The
monocular prior is any depth map (file or ground-plane heuristic) turned
into a soft distribution. A per-pixel confidence derived from the cost
curve's peak ratio blends the two; where matching is ambiguous
(textureless regions, no baseline) the prior takes over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, InputError, NoValidPixels
from .geometry import Intrinsics
from .plane_sweep import DepthDistribution, DepthLevels, FrustumVolume


# log-probabilities are floored here so an impossible target costs a
# large finite amount instead of inf
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class DepthLossConfig:
    fg_weight: float = 5.0
    bg_weight: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not (self.fg_weight > 0 and self.bg_weight > 0):
            raise InputError("loss weights must be positive")
        if not self.gamma >= 0:
            raise InputError("gamma must be non-negative")


def soft_targets(depth, levels: DepthLevels, width: float = 1.0) -> np.ndarray:
    """Triangular weights ``max(1 - |d - d(w)| / (width * step), 0)``, shape (..., L).

    Evaluated in bin-index space; indices within 1e-9 of a bin centre snap
    to it so depths on a level give exact one-hot targets.
    """
    w = levels.fractional_index(np.asarray(depth, dtype=float))
    r = np.round(w)
    w = np.where(np.abs(w - r) < 1e-9, r, w)[..., None]
    return np.maximum(1.0 - np.abs(w - np.arange(levels.count)) / width, 0.0)


def mono_prior_distribution(depth_map, levels: DepthLevels, sharpness: float = 1.0) -> DepthDistribution:
    """Soft one-bin-wide (times ``sharpness``) assignment of a depth map.

    Depths outside the level range are clamped to it; NaN pixels are invalid.
    """
    if not sharpness > 0:
        raise InputError("sharpness must be positive")
    d = np.asarray(depth_map, dtype=float)
    valid = np.isfinite(d)
    d = np.clip(np.where(valid, d, levels.d_min), levels.d_min, levels.d_max)
    w = soft_targets(d, levels, sharpness)
    s = w.sum(axis=-1, keepdims=True)
    probs = np.where(valid[..., None], w / s, 0.0)
    return DepthDistribution(probs, valid, levels)


def ground_plane_depth(
    cam: Intrinsics,
    size: tuple[int, int],
    camera_height: float = 1.65,
    fallback: float | None = None,
) -> np.ndarray:
    """Depth of a flat ground plane ``camera_height`` below a level camera.

    Rows at or above the horizon get ``fallback`` (NaN when None).
    """
    h, w = size
    v = np.arange(h, dtype=float)[:, None] - cam.cv
    with np.errstate(divide="ignore"):
        d = np.where(v > 0, cam.fy * camera_height / np.where(v > 0, v, 1.0), np.nan)
    d = np.broadcast_to(d, (h, w)).copy()
    if fallback is not None:
        d[~np.isfinite(d)] = fallback
    return d


def stereo_confidence(vol: FrustumVolume, exclusion_px: float = 1.0, exclusion_bins: int = 3) -> np.ndarray:
    """Per-pixel match distinctiveness in [0, 1].

    ``1 - best_cost / competitor_cost``, where the competitor is the lowest
    cost among hypotheses that land more than ``exclusion_px`` away from
    the best match in the previous image (or, without warp information,
    more than ``exclusion_bins`` levels away). Pixels with no competitor,
    e.g. under zero baseline where every level samples the same spot, get
    0: their depth is unobservable.
    """
    h, w, n = vol.values.shape
    valid = vol.mask.any(axis=2)
    costs = np.where(vol.mask, vol.values.astype(np.float64), np.inf)
    best_k = costs.argmin(axis=2)
    best = np.take_along_axis(costs, best_k[..., None], axis=2)[..., 0]
    second = np.full((h, w), np.inf)
    levels = vol.levels
    if vol.warp is not None:
        bu, bv, _ = vol.warp(levels.depth(best_k))
        for k in range(n):
            u, v, _ = vol.warp(levels.depths[k])
            far = np.hypot(u - bu, v - bv) > exclusion_px
            second = np.where(far, np.minimum(second, costs[:, :, k]), second)
    else:
        for k in range(n):
            far = np.abs(k - best_k) > exclusion_bins
            second = np.where(far, np.minimum(second, costs[:, :, k]), second)
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = 1.0 - best / second
    ok = valid & np.isfinite(second) & (second > 0)
    return np.where(ok, np.clip(omega, 0.0, 1.0), 0.0)


def fuse(p_mono: DepthDistribution, p_stereo: DepthDistribution, omega) -> DepthDistribution:
    """``omega * P_stereo + (1 - omega) * P_mono``, renormalised per pixel.

    ``omega`` is per pixel (H, W) or per bin (H, W, L). A side that is
    invalid at a pixel yields to the other.
    """
    if p_mono.probs.shape != p_stereo.probs.shape:
        raise GridMismatch(f"grids differ: {p_mono.probs.shape} vs {p_stereo.probs.shape}")
    if p_mono.levels != p_stereo.levels:
        raise GridMismatch("distributions use different depth levels")
    om = np.asarray(omega, dtype=float)
    if om.shape == p_mono.valid.shape:
        om = om[..., None]
    elif om.shape != p_mono.probs.shape:
        raise GridMismatch(f"weights shape {om.shape} matches neither pixel nor bin grid")
    if np.any((om < 0) | (om > 1)):
        raise InputError("fusion weights must lie in [0, 1]")
    om = np.where(p_stereo.valid[..., None], om, 0.0)
    om = np.where(p_mono.valid[..., None], om, 1.0)
    fused = om * p_stereo.probs + (1.0 - om) * p_mono.probs
    s = fused.sum(axis=-1, keepdims=True)
    valid = p_mono.valid | p_stereo.valid
    probs = np.divide(fused, s, out=np.zeros_like(fused), where=(s > 0) & valid[..., None])
    return DepthDistribution(probs, valid, p_mono.levels)


def depth_ce_loss(
    dist: DepthDistribution,
    gt_depth,
    cfg: DepthLossConfig | None = None,
    fg_mask=None,
) -> tuple[float, np.ndarray]:
    """Soft-target focal cross-entropy against sparse ground-truth depth.

    Per valid pixel: ``sum_w -t_w (1 - p_w)^gamma log p_w`` with triangular
    targets one bin wide, weighted by ``fg_weight`` or ``bg_weight``, and
    averaged over the number of valid ground-truth pixels. Probabilities
    are floored at ``PROB_FLOOR`` inside the log. ``gamma = 0``
    with unit weights is the plain cross-entropy.

    Returns ``(loss, per_pixel)``; ``per_pixel`` is NaN off the valid set.
    """
    cfg = cfg or DepthLossConfig()
    gt = np.asarray(gt_depth, dtype=float)
    if gt.shape != dist.valid.shape:
        raise GridMismatch(f"ground truth {gt.shape} vs distribution {dist.valid.shape}")
    levels = dist.levels
    valid = np.isfinite(gt) & (gt >= levels.d_min) & (gt <= levels.d_max) & dist.valid
    n_gt = int(valid.sum())
    if n_gt == 0:
        raise NoValidPixels("no pixel has usable ground-truth depth")
    idx = np.nonzero(valid)
    p = dist.probs[idx].astype(np.float64)
    t = soft_targets(gt[idx], levels)
    on = t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(np.maximum(np.where(on, p, 1.0), PROB_FLOOR))
        focal = (1.0 - p) ** cfg.gamma if cfg.gamma != 0 else 1.0
        terms = np.where(on, -t * focal * logp, 0.0)
    per = terms.sum(axis=1)
    if fg_mask is not None:
        fg = np.asarray(fg_mask, dtype=bool)[idx]
        per = per * np.where(fg, cfg.fg_weight, cfg.bg_weight)
    else:
        per = per * cfg.bg_weight
    out = np.full(gt.shape, np.nan)
    out[idx] = per
    return float(per.sum() / n_gt), out
