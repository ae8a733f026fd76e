"""Depth error statistics: median absolute error and threshold ratios."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, NoValidPixels

THRESHOLDS = (0.2, 0.4, 0.8, 1.6)
MIN_OBJECT_POINTS = 5


def lower_median(x) -> float:
    """Order statistic ``x_(ceil(n/2))``: the lower middle for even counts."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if x.size == 0:
        raise NoValidPixels("median of an empty set")
    return float(x[(x.size - 1) // 2])


@dataclass(frozen=True)
class ErrorStats:
    """Median absolute error (m) and the fraction of points above each threshold."""

    median: float
    ratios: tuple[float, ...]
    count: int

    def __post_init__(self):
        r = self.ratios
        if any(b > a for a, b in zip(r, r[1:])):
            raise AssertionError(f"threshold ratios not monotone: {r}")

    def to_dict(self, thresholds=THRESHOLDS) -> dict:
        return {
            "median": self.median,
            "ratios": {f"{t:g}": r for t, r in zip(thresholds, self.ratios)},
            "count": self.count,
        }


def error_stats(abs_err, thresholds=THRESHOLDS) -> ErrorStats:
    e = np.asarray(abs_err, dtype=float).ravel()
    if e.size == 0:
        raise NoValidPixels("no valid points")
    ratios = tuple(float(np.count_nonzero(e > t)) / e.size for t in thresholds)
    return ErrorStats(lower_median(e), ratios, int(e.size))


@dataclass(frozen=True)
class DepthErrorReport:
    """Scene-level and foreground depth error statistics.

    ``foreground_pooled`` treats all foreground points as one set;
    ``foreground_objects`` averages per-object medians and ratios over
    objects with at least ``MIN_OBJECT_POINTS`` valid points. Either is
    None when there is no usable foreground.
    """

    all: ErrorStats
    foreground_pooled: ErrorStats | None = None
    foreground_objects: ErrorStats | None = None
    objects_used: int = 0
    objects_ignored: int = 0
    thresholds: tuple[float, ...] = field(default=THRESHOLDS)

    def to_dict(self) -> dict:
        def opt(s):
            return None if s is None else s.to_dict(self.thresholds)

        return {
            "all": self.all.to_dict(self.thresholds),
            "foreground_pooled": opt(self.foreground_pooled),
            "foreground_object_average": opt(self.foreground_objects),
            "objects_used": self.objects_used,
            "objects_ignored": self.objects_ignored,
        }


def depth_error_metrics(pred, gt, fg_mask=None, labels=None, thresholds=THRESHOLDS) -> DepthErrorReport:
    """Compare predicted and ground-truth depth maps.

    Args:
        pred: Predicted depth; non-finite entries count as invalid.
        gt: Ground-truth depth; valid where finite and positive.
        fg_mask: Optional boolean foreground mask.
        labels: Optional integer object ids (0 = background). Implies a
            foreground mask of ``labels > 0`` when ``fg_mask`` is None.
        thresholds: Absolute error thresholds in metres.

    Raises:
        GridMismatch: arrays differ in shape.
        NoValidPixels: no pixel has both a valid prediction and ground truth.
    """
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    for name, arr in (("ground truth", g), ("foreground mask", fg_mask), ("labels", labels)):
        if arr is not None and np.shape(arr) != p.shape:
            raise GridMismatch(f"{name} {np.shape(arr)} vs prediction {p.shape}")
    valid = np.isfinite(g) & (g > 0) & np.isfinite(p)
    if not valid.any():
        raise NoValidPixels("no pixel has both prediction and ground truth")
    err = np.abs(p - g)
    report = {"all": error_stats(err[valid], thresholds)}
    lab = None if labels is None else np.asarray(labels).astype(np.int64)
    fg = np.asarray(fg_mask, dtype=bool) if fg_mask is not None else (lab > 0 if lab is not None else None)
    used = ignored = 0
    if fg is not None and (fg & valid).any():
        report["foreground_pooled"] = error_stats(err[fg & valid], thresholds)
        per = []
        if lab is not None:
            for obj in np.unique(lab[fg & (lab > 0)]):
                sel = fg & valid & (lab == obj)
                if np.count_nonzero(sel) < MIN_OBJECT_POINTS:
                    ignored += 1
                    continue
                per.append(error_stats(err[sel], thresholds))
        else:
            per.append(report["foreground_pooled"])
        used = len(per)
        if per:
            report["foreground_objects"] = ErrorStats(
                float(np.mean([s.median for s in per])),
                tuple(float(np.mean([s.ratios[i] for s in per])) for i in range(len(thresholds))),
                int(sum(s.count for s in per)),
            )
    return DepthErrorReport(
        objects_used=used, objects_ignored=ignored, thresholds=tuple(thresholds), **report
    )
