"""Image buffers: bilinear sampling, box filtering and pyramids."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import spline_filter, uniform_filter

from .errors import ImageSizeMismatch, InputError

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def as_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise InputError(f"expected a 2-D grayscale image, got shape {img.shape}")
    return img


def check_same_size(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ImageSizeMismatch(f"image sizes differ: {a.shape} vs {b.shape}")


def inside(u, v, height: int, width: int) -> np.ndarray:
    """Coordinates where all four bilinear neighbours exist."""
    return (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)


def _corners(img: np.ndarray, u: np.ndarray, v: np.ndarray):
    h, w = img.shape
    u0 = np.clip(np.floor(u), 0, max(w - 2, 0)).astype(np.intp)
    v0 = np.clip(np.floor(v), 0, max(h - 2, 0)).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    return u0, v0, u1, v1, u - u0, v - v0


def _bilinear_numpy(img, u, v):
    h, w = img.shape
    valid = inside(u, v, h, w)
    us = np.where(valid, u, 0.0)
    vs = np.where(valid, v, 0.0)
    # coordinates are non-negative here, so truncation is floor
    u0 = np.minimum(us.astype(np.intp), max(w - 2, 0))
    v0 = np.minimum(vs.astype(np.intp), max(h - 2, 0))
    fu = us - u0
    fv = vs - v0
    flat = img.ravel()
    idx = v0 * w + u0
    du = 1 if w > 1 else 0
    dv = w if h > 1 else 0
    top = flat[idx] * (1.0 - fu) + flat[idx + du] * fu
    bot = flat[idx + dv] * (1.0 - fu) + flat[idx + dv + du] * fu
    out = top * (1.0 - fv) + bot * fv
    out *= valid
    return out, valid


if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _bilinear_kernel(img, u, v, out, valid):  # pragma: no cover - compiled
        h, w = img.shape
        umax = max(w - 2, 0)
        vmax = max(h - 2, 0)
        du = 1 if w > 1 else 0
        dv = 1 if h > 1 else 0
        for i in range(u.size):
            x = u[i]
            y = v[i]
            if x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1:
                x0 = min(int(x), umax)
                y0 = min(int(y), vmax)
                fx = x - x0
                fy = y - y0
                top = img[y0, x0] * (1.0 - fx) + img[y0, x0 + du] * fx
                bot = img[y0 + dv, x0] * (1.0 - fx) + img[y0 + dv, x0 + du] * fx
                out[i] = top * (1.0 - fy) + bot * fy
                valid[i] = True
            else:
                out[i] = 0.0
                valid[i] = False


def bilinear_sample(img, u, v, fill: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``img`` at float pixel coordinates.

    Returns ``(values, valid)``; samples outside ``[0, W-1] x [0, H-1]`` (or
    non-finite) get ``fill`` and ``valid = False``. Integer coordinates
    reproduce pixel values exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
    if numba is not None and u.size > 0:
        shape = u.shape
        uf = np.ascontiguousarray(u).ravel()
        vf = np.ascontiguousarray(v).ravel()
        out = np.empty(uf.size)
        valid = np.empty(uf.size, dtype=bool)
        _bilinear_kernel(np.ascontiguousarray(img), uf, vf, out, valid)
        out, valid = out.reshape(shape), valid.reshape(shape)
    else:
        out, valid = _bilinear_numpy(img, u, v)
    if fill != 0.0:
        out = np.where(valid, out, fill)
    return out, valid


def bilinear_sample_grad(img, u, v, clamp: bool = False):
    """Bilinear sample plus its partial derivatives in u and v.

    Returns ``(values, d_du, d_dv, valid)``. Derivatives are one-sided on
    the cell containing the sample. With ``clamp`` out-of-range finite
    coordinates are clamped to the border (continuous extension, zero
    derivative across it) while ``valid`` still reports the raw test.
    """
    img = np.asarray(img, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h, w = img.shape
    valid = inside(u, v, h, w)
    if clamp:
        finite = np.isfinite(u) & np.isfinite(v)
        us = np.clip(np.where(finite, u, 0.0), 0, w - 1)
        vs = np.clip(np.where(finite, v, 0.0), 0, h - 1)
        out_u = finite & ((u < 0) | (u > w - 1))
        out_v = finite & ((v < 0) | (v > h - 1))
        u0, v0, u1, v1, fu, fv = _corners(img, us, vs)
        i00, i01, i10, i11 = img[v0, u0], img[v0, u1], img[v1, u0], img[v1, u1]
        top = i00 * (1.0 - fu) + i01 * fu
        bot = i10 * (1.0 - fu) + i11 * fu
        val = top * (1.0 - fv) + bot * fv
        d_du = np.where(out_u, 0.0, (i01 - i00) * (1.0 - fv) + (i11 - i10) * fv)
        d_dv = np.where(out_v, 0.0, bot - top)
        return np.where(finite, val, 0.0), d_du, d_dv, valid
    us = np.where(valid, u, 0.0)
    vs = np.where(valid, v, 0.0)
    u0, v0, u1, v1, fu, fv = _corners(img, us, vs)
    i00, i01, i10, i11 = img[v0, u0], img[v0, u1], img[v1, u0], img[v1, u1]
    top = i00 * (1.0 - fu) + i01 * fu
    bot = i10 * (1.0 - fu) + i11 * fu
    val = top * (1.0 - fv) + bot * fv
    d_du = (i01 - i00) * (1.0 - fv) + (i11 - i10) * fv
    d_dv = bot - top
    z = np.zeros_like(val)
    return np.where(valid, val, 0.0), np.where(valid, d_du, z), np.where(valid, d_dv, z), valid


def box_mean(img: np.ndarray, size: int, mode: str = "nearest") -> np.ndarray:
    return uniform_filter(img, size=size, mode=mode)


def all_valid_in_window(mask: np.ndarray, size: int) -> np.ndarray:
    """True where every pixel of the ``size`` window (zero outside) is valid."""
    frac = uniform_filter(mask.astype(np.float64), size=size, mode="constant", cval=0.0)
    return frac > 1.0 - 0.5 / (size * size)


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 box average; odd trailing rows/columns are dropped."""
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def downsample2_depth(depth: np.ndarray) -> np.ndarray:
    """2x2 average of the finite entries; NaN where none are finite."""
    h, w = depth.shape
    d = depth[: h - h % 2, : w - w % 2]
    blocks = np.stack([d[0::2, 0::2], d[1::2, 0::2], d[0::2, 1::2], d[1::2, 1::2]])
    ok = np.isfinite(blocks)
    n = ok.sum(axis=0)
    s = np.where(ok, blocks, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, s / np.maximum(n, 1), np.nan)


def _bspline_weights(t):
    """Cubic B-spline weights and their derivatives for offsets -1..2."""
    t2 = t * t
    t3 = t2 * t
    w = (
        (1.0 - t) ** 3 / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    )
    dw = (
        -0.5 * (1.0 - t) ** 2,
        1.5 * t2 - 2.0 * t,
        -1.5 * t2 + t + 0.5,
        0.5 * t2,
    )
    return w, dw


class SplineImage:
    """Cubic B-spline interpolant of an image (twice continuously differentiable).

    Interpolates the pixel values exactly; borders are mirrored. Used where
    a smooth objective matters more than locality, e.g. pose refinement.
    """

    def __init__(self, img):
        img = as_image(img)
        self.shape = img.shape
        coef = spline_filter(img, order=3, mode="mirror")
        self._coef = np.pad(coef, 2, mode="reflect")

    def sample_grad(self, u, v):
        """Values and partials at ``(u, v)``, clamped to the image rectangle.

        Returns ``(values, d_du, d_dv, valid)``; outside the rectangle the
        sample is taken at the nearest border point with zero derivative
        across the border, and ``valid`` is False.
        """
        h, w = self.shape
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        valid = inside(u, v, h, w)
        finite = np.isfinite(u) & np.isfinite(v)
        us = np.clip(np.where(finite, u, 0.0), 0, w - 1)
        vs = np.clip(np.where(finite, v, 0.0), 0, h - 1)
        iu = np.minimum(np.floor(us), max(w - 2, 0)).astype(np.intp)
        iv = np.minimum(np.floor(vs), max(h - 2, 0)).astype(np.intp)
        wu, dwu = _bspline_weights(us - iu)
        wv, dwv = _bspline_weights(vs - iv)
        c = self._coef
        cols = c.shape[1]
        flat = c.ravel()
        base = (iv + 1) * cols + (iu + 1)
        val = np.zeros(us.shape)
        gu = np.zeros(us.shape)
        gv = np.zeros(us.shape)
        for j in range(4):
            row_v = np.zeros(us.shape)
            row_du = np.zeros(us.shape)
            for i in range(4):
                x = flat[base + j * cols + i]
                row_v += wu[i] * x
                row_du += dwu[i] * x
            val += wv[j] * row_v
            gu += wv[j] * row_du
            gv += dwv[j] * row_v
        gu = np.where(finite & ((u < 0) | (u > w - 1)), 0.0, gu)
        gv = np.where(finite & ((v < 0) | (v > h - 1)), 0.0, gv)
        return np.where(finite, val, 0.0), gu, gv, valid
