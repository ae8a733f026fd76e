"""Closed-form object depth from two views.

Three settings of increasing generality are covered: a binocular rig,
two parallel views related by a pure translation, and a general rigid
motion between the views. Moving object centres are handled by folding
the object's own translation into the camera translation.

Motion convention: ``T`` maps frame-1 camera coordinates into frame-2
camera coordinates, ``X2 = R X1 + t``. For a pure translation the parallel
formulas use ``dx = x1 - x2`` and ``dD = D1 - D2``, i.e. ``t = (-dx, 0, -dD)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NoValidSolution, NonPhysicalDepth, ZeroDisparity
from .geometry import Intrinsics, RigidMotion

EPS_DISP = 1e-6
EPS_DEN = 1e-9


class Correspondence(NamedTuple):
    u1: float
    v1: float
    u2: float
    v2: float


class ABCoefficients(NamedTuple):
    A1: float
    A2: float
    A3: float
    B1: float
    B2: float
    B3: float


@dataclass(frozen=True)
class TwoViewDepth:
    """Result of the general two-view solve.

    ``d1_from_u``/``d1_from_v`` are None when that form's denominator is
    degenerate. ``d1`` combines the available forms, weighting each by its
    denominator magnitude (pixel noise enters each estimate scaled by
    ``1/|den|``). ``flags`` may hold ``degenerate_u``, ``degenerate_v`` and
    ``non_physical``.
    """

    d1_from_u: float | None
    d1_from_v: float | None
    d1: float
    d2: float
    ab: ABCoefficients
    den_u: float
    den_v: float
    flags: frozenset = field(default_factory=frozenset)


def binocular_depth(f: float, b: float, disp: float, eps_disp: float = EPS_DISP) -> float:
    """Depth ``f * b / disp`` of a rectified stereo pair."""
    if abs(disp) < eps_disp:
        raise ZeroDisparity(f"disparity {disp} below {eps_disp}")
    return f * b / disp


def effective_baseline(dx: float, dD: float, u2: float, cam: Intrinsics) -> float:
    """Signed baseline ``dx - (u2 - cu)/f * dD`` of a parallel two-view pair."""
    return dx - (u2 - cam.cu) / cam.fx * dD


def parallel_two_view_depth(
    cam: Intrinsics,
    u1: float,
    u2: float,
    dx: float,
    dD: float,
    eps_disp: float = EPS_DISP,
) -> float:
    """Frame-1 depth for two views separated by a translation (dx, 0, dD).

    Raises:
        ZeroDisparity: ``|u1 - u2|`` below ``eps_disp``.
        NonPhysicalDepth: result <= 0; the value is kept on the exception.
    """
    disp = u1 - u2
    if abs(disp) < eps_disp:
        raise ZeroDisparity(f"disparity {disp} below {eps_disp}")
    d1 = cam.fx * effective_baseline(dx, dD, u2, cam) / disp
    if not d1 > 0:
        raise NonPhysicalDepth(f"depth {d1} is not positive", d1)
    return d1


def ab_coefficients(cam: Intrinsics, T: RigidMotion, corr: Correspondence) -> ABCoefficients:
    R = T.R
    t = T.t
    xn = (corr.u1 - cam.cu) / cam.fx
    yn = (corr.v1 - cam.cv) / cam.fy
    A = R[:, 0] * xn + R[:, 1] * yn + R[:, 2]
    return ABCoefficients(float(A[0]), float(A[1]), float(A[2]), float(t[0]), float(t[1]), float(t[2]))


def general_two_view_depth(
    cam: Intrinsics,
    T: RigidMotion,
    corr: Correspondence,
    eps_den: float = EPS_DEN,
) -> TwoViewDepth:
    """Depth of a matched point under a general rigid motion.

    Solves the two projection relations plus ``X2 = R X1 + t`` for ``D1``
    once through the horizontal and once through the vertical image
    coordinate of frame 2, then ``D2 = A3 D1 + B3``.

    Raises:
        NoValidSolution: both denominators fall below ``eps_den``.
    """
    ab = ab_coefficients(cam, T, corr)
    a_u = (corr.u2 - cam.cu) / cam.fx
    a_v = (corr.v2 - cam.cv) / cam.fy
    den_u = a_u * ab.A3 - ab.A1
    den_v = a_v * ab.A3 - ab.A2

    flags = set()
    d1_u = d1_v = None
    if abs(den_u) >= eps_den:
        d1_u = (ab.B1 - a_u * ab.B3) / den_u
    else:
        flags.add("degenerate_u")
    if abs(den_v) >= eps_den:
        d1_v = (ab.B2 - a_v * ab.B3) / den_v
    else:
        flags.add("degenerate_v")

    if d1_u is None and d1_v is None:
        raise NoValidSolution(f"both denominators degenerate: den_u={den_u}, den_v={den_v}")
    if d1_v is None:
        d1 = d1_u
    elif d1_u is None:
        d1 = d1_v
    else:
        wu, wv = abs(den_u), abs(den_v)
        d1 = (wu * d1_u + wv * d1_v) / (wu + wv)

    d2 = ab.A3 * d1 + ab.B3
    if not (d1 > 0 and d2 > 0):
        flags.add("non_physical")
    return TwoViewDepth(d1_u, d1_v, d1, d2, ab, den_u, den_v, frozenset(flags))


def moving_center_depth(
    cam: Intrinsics,
    T_ego: RigidMotion,
    t_obj,
    corr: Correspondence,
    eps_den: float = EPS_DEN,
) -> TwoViewDepth:
    """Depth of a translating object's centre.

    The object's translation ``t_obj`` (frame-2 camera coordinates) is added
    to the ego translation; rotation of the object does not move its centre.
    """
    t = T_ego.t + np.asarray(t_obj, dtype=float)
    return general_two_view_depth(cam, T_ego.with_translation(t), corr, eps_den)


def degenerate_u2(cam: Intrinsics, T: RigidMotion, u1: float, v1: float) -> float:
    """The frame-2 column at which the u-form denominator vanishes."""
    ab = ab_coefficients(cam, T, Correspondence(u1, v1, 0.0, 0.0))
    if ab.A3 == 0:
        return math.inf
    return cam.cu + cam.fx * ab.A1 / ab.A3


def degenerate_v2(cam: Intrinsics, T: RigidMotion, u1: float, v1: float) -> float:
    ab = ab_coefficients(cam, T, Correspondence(u1, v1, 0.0, 0.0))
    if ab.A3 == 0:
        return math.inf
    return cam.cv + cam.fy * ab.A2 / ab.A3
