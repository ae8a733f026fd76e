"""Photometric ego-motion estimation with metric depth held fixed.

The previous frame is warped into frame t through the frame-t depth and a
candidate pose; the pose minimises an SSIM + L1 appearance loss plus an
edge-aware depth smoothness term. Because depth is metric, the recovered
translation is metric too.

The optimiser works on left perturbations ``T <- Exp(xi) T`` with
``xi = (rho, omega)`` (translation first). Gradients are analytic: the
cubic B-spline sampler, projection and the 3x3-window SSIM are
differentiated in closed form. The L1 term is rounded off within
``l1_eps`` of zero so the objective is smooth.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DegenerateOverlap, Diverged, EmptyMask, ImageSizeMismatch, InputError, ZeroQuaternion
from .geometry import Intrinsics, RigidMotion, backproject_pixels
from .imaging import (
    all_valid_in_window,
    as_image,
    bilinear_sample,
    downsample2,
    downsample2_depth,
    SplineImage,
)

logger = logging.getLogger(__name__)

C1 = 0.01**2
C2 = 0.03**2


@dataclass(frozen=True)
class PoseLossConfig:
    alpha: float = 0.85
    lambda_s: float = 0.001
    lambda_r: float = 1.0
    pyramid_levels: int = 4
    max_iterations: int = 100
    tol: float = 1e-8
    automask: bool = True
    normalize_smoothness: bool = True
    min_overlap: float = 0.1
    l1_eps: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda_s < 0:
            raise InputError("lambda_s must be non-negative")
        if self.pyramid_levels < 1:
            raise InputError("need at least one pyramid level")


def synthesize_view(img_prev, depth_t, cam: Intrinsics, motion: RigidMotion) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruct frame t by sampling the previous image through depth and pose.

    ``motion`` maps frame-t camera coordinates into the previous frame.
    Returns ``(image, mask)``; the mask is False where depth is invalid,
    the point lands behind the camera or outside the previous image.
    """
    img_prev = as_image(img_prev)
    depth = np.asarray(depth_t, dtype=float)
    if depth.shape != img_prev.shape:
        raise ImageSizeMismatch(f"depth {depth.shape} vs image {img_prev.shape}")
    h, w = depth.shape
    ok_d = np.isfinite(depth) & (depth > 0)
    if motion.is_identity:
        return np.where(ok_d, img_prev, 0.0), ok_d
    v, u = np.mgrid[0:h, 0:w].astype(float)
    pts = motion.apply(backproject_pixels(cam, u, v, np.where(ok_d, depth, 1.0)))
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        us = cam.fx * pts[..., 0] / z + cam.cu
        vs = cam.fy * pts[..., 1] / z + cam.cv
    out, ok = bilinear_sample(img_prev, us, vs)
    ok &= ok_d & (z > 0)
    return np.where(ok, out, 0.0), ok


def _soft_abs(x, eps: float):
    """``sqrt(x^2 + eps^2) - eps``: |x| with the kink at zero rounded off."""
    return np.sqrt(x * x + eps * eps) - eps if eps > 0 else np.abs(x)


def _soft_abs_grad(x, eps: float):
    return x / np.sqrt(x * x + eps * eps) if eps > 0 else np.sign(x)


def _ssim_terms(a, b):
    mu_a = uniform_filter(a, 3, mode="reflect")
    mu_b = uniform_filter(b, 3, mode="reflect")
    e_aa = uniform_filter(a * a, 3, mode="reflect")
    e_bb = uniform_filter(b * b, 3, mode="reflect")
    e_ab = uniform_filter(a * b, 3, mode="reflect")
    return mu_a, mu_b, e_aa, e_bb, e_ab


def _ssim_from_terms(mu_a, mu_b, e_aa, e_bb, e_ab):
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + C1
    n2 = 2.0 * cov + C2
    d1 = mu_a * mu_a + mu_b * mu_b + C1
    d2 = var_a + var_b + C2
    return n1, n2, d1, d2


def ssim_map(a, b) -> np.ndarray:
    """Per-pixel SSIM with a 3x3 box window (reflected at the border).

    Intensities are assumed in [0, 1]; ``C1 = 0.01**2``, ``C2 = 0.03**2``.
    """
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ImageSizeMismatch(f"image sizes differ: {a.shape} vs {b.shape}")
    n1, n2, d1, d2 = _ssim_from_terms(*_ssim_terms(a, b))
    return (n1 * n2) / (d1 * d2)


def photometric_loss(img_t, img_synth, mask, alpha: float = 0.85) -> float:
    """Mean over ``mask`` of ``alpha/2 (1 - SSIM) + (1 - alpha) |I_t - I_synth|``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("no valid pixel to compare")
    a = as_image(img_t)
    b = as_image(img_synth)
    s = ssim_map(a, b)
    per = alpha / 2.0 * (1.0 - s) + (1.0 - alpha) * np.abs(a - b)
    return float(per[mask].mean())


def smoothness_loss(depth, img_t, normalize: bool = True) -> float:
    """Edge-aware smoothness ``|dx D| e^{-|dx I|} + |dy D| e^{-|dy I|}``.

    Forward differences; each direction is averaged over its finite
    differences and the two means are summed. With ``normalize`` the depth
    is divided by its mean first, making the term scale-free.
    """
    d = np.asarray(depth, dtype=float)
    img = as_image(img_t)
    if d.shape != img.shape:
        raise ImageSizeMismatch(f"depth {d.shape} vs image {img.shape}")
    if normalize:
        finite = np.isfinite(d)
        if not finite.any():
            return 0.0
        d = d / d[finite].mean()
    total = 0.0
    for axis in (1, 0):
        dd = np.abs(np.diff(d, axis=axis))
        di = np.abs(np.diff(img, axis=axis))
        terms = dd * np.exp(-di)
        ok = np.isfinite(terms)
        if ok.any():
            total += float(terms[ok].mean())
    return total


def supervised_pose_loss(pred_t, pred_q, gt: RigidMotion, lambda_r: float = 1.0) -> float:
    """L1 translation error plus ``lambda_r`` times the quaternion L1 error.

    ``pred_q`` is unnormalised (w, x, y, z); the rotation term takes the
    smaller of the errors against ``q`` and ``-q`` since both encode the
    same rotation.
    """
    q_hat = np.asarray(pred_q, dtype=float)
    n = float(np.linalg.norm(q_hat))
    if not n >= 1e-15:
        raise ZeroQuaternion(f"predicted quaternion norm {n}")
    q_hat = q_hat / n
    q = gt.rotation.as_array()
    l_t = float(np.abs(np.asarray(pred_t, dtype=float) - gt.t).sum())
    l_r = min(float(np.abs(q - q_hat).sum()), float(np.abs(q + q_hat).sum()))
    return l_t + lambda_r * l_r


class Support(NamedTuple):
    """Pixels counted by the objective and where the warped loss is used."""

    pixels: np.ndarray
    use: np.ndarray


class PhotometricObjective:
    """Pose objective on one image scale, with analytic gradient.

    ``value(T)`` is the mean over usable pixels of the per-pixel appearance
    loss (auto-masked by the loss of the unwarped previous image) plus
    ``lambda_s`` times the depth smoothness. Usable pixels have valid depth,
    lie one pixel inside the border, and have a fully valid 3x3 SSIM
    window in the synthesised image.
    """

    def __init__(self, img_t, img_prev, depth_t, cam: Intrinsics, cfg: PoseLossConfig | None = None):
        self.cfg = cfg or PoseLossConfig()
        self.a = as_image(img_t)
        self.prev = as_image(img_prev)
        depth = np.asarray(depth_t, dtype=float)
        if not (self.a.shape == self.prev.shape == depth.shape):
            raise ImageSizeMismatch(f"shapes differ: {self.a.shape}, {self.prev.shape}, {depth.shape}")
        self.cam = cam
        self.prev_spline = SplineImage(self.prev)
        h, w = self.a.shape
        self.depth_ok = np.isfinite(depth) & (depth > 0)
        v, u = np.mgrid[0:h, 0:w].astype(float)
        self.points = backproject_pixels(cam, u, v, np.where(self.depth_ok, depth, 1.0))
        interior = np.zeros((h, w), dtype=bool)
        interior[1:-1, 1:-1] = True
        self.interior = interior
        alpha = self.cfg.alpha
        s_id = ssim_map(self.a, self.prev)
        self.identity_loss = alpha / 2.0 * (1.0 - s_id) + (1.0 - alpha) * _soft_abs(self.a - self.prev, self.cfg.l1_eps)
        self.smooth = self.cfg.lambda_s * smoothness_loss(
            np.where(self.depth_ok, depth, np.nan), self.a, self.cfg.normalize_smoothness
        )

    def support(self, T: RigidMotion, margin: float = 1.0) -> Support:
        """Pixel set and auto-mask choice at pose ``T``.

        Usable pixels have valid depth, lie in front of the previous camera,
        land at least ``margin`` px inside the previous image and have a
        full 3x3 window. The auto-mask records where the warped loss beats
        the identity loss; holding both fixed makes the objective smooth
        throughout a step.
        """
        P = self.points @ T.R.T + T.t
        z = P[..., 2]
        front = self.depth_ok & (z > 0)
        zs = np.where(front, z, 1.0)
        u = self.cam.fx * P[..., 0] / zs + self.cam.cu
        v = self.cam.fy * P[..., 1] / zs + self.cam.cv
        h, w = self.a.shape
        ok = front & (u >= margin) & (u <= w - 1 - margin) & (v >= margin) & (v <= h - 1 - margin)
        pixels = all_valid_in_window(ok, 3) & self.interior
        if self.cfg.automask:
            l_warp = self._warp_loss(T)[0]
            use = l_warp <= self.identity_loss
        else:
            use = np.ones_like(pixels)
        return Support(pixels, use)

    def _warp_loss(self, T: RigidMotion):
        alpha = self.cfg.alpha
        P = self.points @ T.R.T + T.t
        z = P[..., 2]
        front = self.depth_ok & (z > 0)
        zs = np.where(front, z, 1.0)
        u = self.cam.fx * P[..., 0] / zs + self.cam.cu
        v = self.cam.fy * P[..., 1] / zs + self.cam.cv
        # smooth sampling, clamped at the border, keeps the objective
        # differentiable when a supported pixel drifts during a line search
        b, bu, bv, _ = self.prev_spline.sample_grad(u, v)
        b = np.where(front, b, 0.0)
        terms = _ssim_terms(self.a, b)
        n1, n2, d1, d2 = _ssim_from_terms(*terms)
        s = n1 * n2 / (d1 * d2)
        diff = b - self.a
        l_warp = alpha / 2.0 * (1.0 - s) + (1.0 - alpha) * _soft_abs(diff, self.cfg.l1_eps)
        return l_warp, (P, zs, front, b, bu, bv, terms, n1, n2, d1, d2, s, diff)

    def _evaluate(self, T: RigidMotion, want_grad: bool, support: Support | None):
        cfg = self.cfg
        alpha = cfg.alpha
        a = self.a
        sup = self.support(T) if support is None else support
        counted, use = sup.pixels, sup.use
        n = int(counted.sum())
        if n < cfg.min_overlap * a.size:
            raise DegenerateOverlap(f"only {n} of {a.size} pixels overlap")
        l_warp, (P, zs, ok, b, bu, bv, terms, n1, n2, d1, d2, s, diff) = self._warp_loss(T)
        mu_a, mu_b, e_aa, e_bb, e_ab = terms
        den = d1 * d2
        per = np.where(use, l_warp, self.identity_loss)
        value = float(per[counted].sum() / n) + self.smooth
        if not want_grad:
            return value, None
        wgt = (counted & use) / n
        # partials of S w.r.t. the window statistics of b
        ds_dmub = (2.0 * mu_a * n2 - 2.0 * mu_a * n1) / den - s * (2.0 * mu_b / d1 - 2.0 * mu_b / d2)
        ds_deab = 2.0 * n1 / den
        ds_debb = -s / d2
        k = -alpha / 2.0 * wgt
        g1 = uniform_filter(k * ds_dmub, 3, mode="constant")
        g2 = uniform_filter(k * ds_deab, 3, mode="constant")
        g3 = uniform_filter(k * ds_debb, 3, mode="constant")
        dl_db = g1 + a * g2 + 2.0 * b * g3 + (1.0 - alpha) * wgt * _soft_abs_grad(diff, cfg.l1_eps)
        dl_db = np.where(ok, dl_db, 0.0)
        fx, fy = self.cam.fx, self.cam.fy
        X, Y = P[..., 0], P[..., 1]
        gu = dl_db * bu
        gv = dl_db * bv
        # d(loss)/dP through the projection
        jx = gu * fx / zs
        jy = gv * fy / zs
        jz = -(gu * fx * X + gv * fy * Y) / (zs * zs)
        J = np.stack([jx, jy, jz], axis=-1)
        grad_rho = J.sum(axis=(0, 1))
        grad_omega = np.cross(P, J).sum(axis=(0, 1))
        return value, np.concatenate([grad_rho, grad_omega])

    def value(self, T: RigidMotion, support: Support | None = None) -> float:
        """Objective at ``T``; ``support`` freezes pixels and mask (default: ``support(T)``)."""
        return self._evaluate(T, False, support)[0]

    def value_and_grad(self, T: RigidMotion, support: Support | None = None) -> tuple[float, np.ndarray]:
        return self._evaluate(T, True, support)

    def numeric_grad(self, T: RigidMotion, h: float = 1e-8, support: Support | None = None) -> np.ndarray:
        """Central differences of ``xi -> value(Exp(xi) T)`` at zero, support frozen at ``T``.

        The objective has kinks where samples cross pixel boundaries, so
        the step is kept small enough that few pixels cross one.
        """
        if support is None:
            support = self.support(T)
        g = np.zeros(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            fp = self.value(RigidMotion.exp(e) @ T, support)
            fm = self.value(RigidMotion.exp(-e) @ T, support)
            g[i] = (fp - fm) / (2 * h)
        return g


@dataclass
class PoseDiagnostics:
    final_loss: float
    initial_loss: float
    iterations: int
    accepted_steps: int
    level_iterations: list = field(default_factory=list)
    gradient_check: float = float("nan")
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "initial_loss": self.initial_loss,
            "iterations": self.iterations,
            "accepted_steps": self.accepted_steps,
            "level_iterations": list(self.level_iterations),
            "gradient_check": self.gradient_check,
            "converged": self.converged,
        }


def build_pyramid(img_t, img_prev, depth_t, cam: Intrinsics, levels: int):
    """Finest-first list of ``(img_t, img_prev, depth, cam)`` tuples."""
    pyr = [(as_image(img_t), as_image(img_prev), np.asarray(depth_t, dtype=float), cam)]
    for _ in range(levels - 1):
        a, b, d, c = pyr[-1]
        if min(a.shape) < 16:
            break
        pyr.append((downsample2(a), downsample2(b), downsample2_depth(d), c.pyramid_down()))
    return pyr


def _minimize_level(obj: PhotometricObjective, T: RigidMotion, cfg: PoseLossConfig, step0: float = 0.05):
    """BFGS in the tangent space with Armijo backtracking.

    The pixel support is frozen for the duration of each step, so every
    accepted step strictly lowers the objective on that support.
    """
    H = None
    iters = accepted = 0
    f = math.nan
    for iters in range(1, cfg.max_iterations + 1):
        support = obj.support(T)
        f, g = obj.value_and_grad(T, support)
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            raise Diverged("objective is not finite")
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            break
        fresh = H is None
        p = None if fresh else -H @ g
        if fresh or float(g @ p) >= 0:
            H = np.eye(6) * (step0 / gnorm)
            p = -H @ g
            fresh = True
        slope = float(g @ p)
        step, ok = 1.0, False
        for _ in range(40):
            T_new = RigidMotion.exp(step * p) @ T
            f_new = obj.value(T_new, support)
            if f_new <= f + 1e-4 * step * slope and f_new < f:
                ok = True
                break
            step *= 0.5
        if not ok:
            if fresh:
                # no descent even along the gradient: local minimum at this scale
                break
            H = None
            continue
        s = step * p
        g_new = obj.value_and_grad(T_new, support)[1]
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-16:
            rho = 1.0 / sy
            eye = np.eye(6)
            H = (eye - rho * np.outer(s, y)) @ H @ (eye - rho * np.outer(y, s)) + rho * np.outer(s, s)
        accepted += 1
        decrease = f - f_new
        T = T_new
        if float(np.linalg.norm(s)) < cfg.tol or decrease < 1e-2 * cfg.tol * max(1.0, abs(f)):
            f = f_new
            break
    return T, f, iters, accepted


def optimize_pose(
    img_t,
    img_prev,
    depth_t,
    cam: Intrinsics,
    cfg: PoseLossConfig | None = None,
    init: RigidMotion | None = None,
) -> tuple[RigidMotion, PoseDiagnostics]:
    """Recover the frame-t -> previous-frame motion from two images and frame-t depth.

    Coarse-to-fine over a ``cfg.pyramid_levels`` image pyramid; every
    accepted step strictly lowers the objective at its level.

    Raises:
        DegenerateOverlap: fewer than ``cfg.min_overlap`` of the pixels
            overlap at the initial pose.
        Diverged: the objective or its gradient became non-finite.
    """
    cfg = cfg or PoseLossConfig()
    T = init or RigidMotion.identity()
    pyr = build_pyramid(img_t, img_prev, depth_t, cam, cfg.pyramid_levels)
    finest = PhotometricObjective(*pyr[0], cfg)
    initial, g = finest.value_and_grad(T)
    # sanity check of the analytic gradient where it is far from zero
    g_fd = finest.numeric_grad(T)
    check = float(np.linalg.norm(g - g_fd)) / max(float(np.linalg.norm(g_fd)), 1e-12)
    total = accepted = 0
    per_level = []
    for a, b, d, c in reversed(pyr):
        obj = finest if c is cam else PhotometricObjective(a, b, d, c, cfg)
        T, f, it, acc = _minimize_level(obj, T, cfg)
        per_level.append(it)
        total += it
        accepted += acc
        logger.debug("pose level %s: loss %.6g after %d iterations", a.shape, f, it)
    final = finest.value(T)
    diag = PoseDiagnostics(final, initial, total, accepted, per_level, check, total < cfg.max_iterations * len(pyr))
    return T, diag


def rotation_error_deg(a: RigidMotion, b: RigidMotion) -> float:
    return math.degrees((a.rotation.conjugate() * b.rotation).angle())


def translation_error(a: RigidMotion, b: RigidMotion) -> float:
    return float(np.linalg.norm(a.t - b.t))
