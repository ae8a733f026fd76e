"""Geometric augmentation that keeps the ego-motion warp physically valid.

Augmentations are applied in the fixed order rescale -> crop -> flip. The
pixel convention is ``u_scaled = scale * u``, under which rescaling and
cropping are exactly a change of intrinsics (focal length and principal
point scaled, principal point shifted). A horizontal flip is not a valid
pinhole camera, so it is undone in pixel space before lifting to 3D and
replayed after projection; the rigid motion itself is always applied in
the un-augmented (canonical) camera frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CropOutOfBounds, InputError
from .geometry import Intrinsics, RigidMotion, backproject_pixels, project_points
from .imaging import as_image, bilinear_sample
from .plane_sweep import DepthLevels

SCALE_RANGE = (0.5, 2.0)


def scaled_size(size: tuple[int, int], scale: float) -> tuple[int, int]:
    """Size of the rescaled image whose every pixel maps inside the source."""
    h, w = size
    return int(math.floor(scale * (h - 1) + 1e-9)) + 1, int(math.floor(scale * (w - 1) + 1e-9)) + 1


@dataclass(frozen=True)
class AugmentationSpec:
    """Rescale, crop ``(x, y, w, h)`` in the rescaled image, then optional flip."""

    flip: bool = False
    scale: float = 1.0
    crop: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    def __post_init__(self):
        if not SCALE_RANGE[0] <= self.scale <= SCALE_RANGE[1]:
            raise InputError(f"scale {self.scale} outside {SCALE_RANGE}")
        crop = tuple(int(c) for c in self.crop)
        if len(crop) != 4 or crop[2] <= 0 or crop[3] <= 0:
            raise InputError(f"crop must be (x, y, w, h) with positive size, got {self.crop}")
        object.__setattr__(self, "crop", crop)

    @classmethod
    def identity(cls, size: tuple[int, int]) -> AugmentationSpec:
        h, w = size
        return cls(False, 1.0, (0, 0, w, h))

    @classmethod
    def full(cls, size: tuple[int, int], scale: float = 1.0, flip: bool = False) -> AugmentationSpec:
        """Rescale without cropping (crop = whole rescaled image)."""
        h, w = scaled_size(size, scale)
        return cls(flip, scale, (0, 0, w, h))

    @property
    def crop_origin(self) -> tuple[int, int]:
        return self.crop[0], self.crop[1]

    @property
    def crop_size(self) -> tuple[int, int]:
        """Output (height, width)."""
        return self.crop[3], self.crop[2]

    def check_bounds(self, size: tuple[int, int]) -> None:
        sh, sw = scaled_size(size, self.scale)
        x, y, w, h = self.crop
        if x < 0 or y < 0 or x + w > sw or y + h > sh:
            raise CropOutOfBounds(f"crop {self.crop} exceeds rescaled image {sw}x{sh}")

    def forward(self, u, v):
        """Canonical pixel coordinates -> augmented pixel coordinates."""
        x = np.asarray(u, dtype=float) * self.scale - self.crop[0]
        y = np.asarray(v, dtype=float) * self.scale - self.crop[1]
        if self.flip:
            x = (self.crop[2] - 1) - x
        return x, y

    def inverse(self, x, y):
        """Augmented pixel coordinates -> canonical pixel coordinates."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.flip:
            x = (self.crop[2] - 1) - x
        return (x + self.crop[0]) / self.scale, (y + self.crop[1]) / self.scale

    def unflip(self, x):
        x = np.asarray(x, dtype=float)
        return (self.crop[2] - 1) - x if self.flip else x

    def to_dict(self) -> dict:
        return {"flip": self.flip, "scale": self.scale, "crop": list(self.crop)}

    @classmethod
    def from_dict(cls, d: dict) -> AugmentationSpec:
        return cls(bool(d.get("flip", False)), float(d.get("scale", 1.0)), tuple(d["crop"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> AugmentationSpec:
        return cls.from_dict(json.loads(text))


def augment_intrinsics(cam: Intrinsics, aug: AugmentationSpec) -> Intrinsics:
    """Intrinsics of the rescaled and cropped image; flips leave them unchanged."""
    return cam.scaled(aug.scale).shifted(*aug.crop_origin)


def apply_augmentation(img, aug: AugmentationSpec) -> np.ndarray:
    """Rescale (bilinear), crop and optionally flip an image."""
    img = as_image(img)
    aug.check_bounds(img.shape)
    h, w = aug.crop_size
    y, x = np.mgrid[0:h, 0:w].astype(float)
    u, v = aug.inverse(x, y)
    out, _ = bilinear_sample(img, u, v)
    return out


@dataclass(frozen=True)
class CanonicalWarp:
    """Plane-sweep warp between two augmented frames through canonical space.

    Frame-t grid points are un-flipped, lifted with frame t's augmented
    intrinsics, moved with ``motion`` and projected with the previous
    frame's augmented intrinsics before its flip is replayed.
    """

    cam: Intrinsics
    motion: RigidMotion
    aug_t: AugmentationSpec
    aug_prev: AugmentationSpec
    _rays: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h, w = self.aug_t.crop_size
        y, x = np.mgrid[0:h, 0:w].astype(float)
        cam_t = augment_intrinsics(self.cam, self.aug_t)
        rays = backproject_pixels(cam_t, self.aug_t.unflip(x), y, 1.0)
        object.__setattr__(self, "_rays", rays @ self.motion.R.T)

    def __call__(self, depth):
        depth = np.asarray(depth, dtype=float)
        pts = self._rays * depth[..., None] + self.motion.t
        u, v, z = project_points(augment_intrinsics(self.cam, self.aug_prev), pts)
        return self.aug_prev.unflip(u), v, z


def canonical_warp_grid(
    aug_t: AugmentationSpec,
    aug_prev: AugmentationSpec,
    cam: Intrinsics,
    motion: RigidMotion,
    levels: DepthLevels,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Warped lattice ``(u, v, valid)`` of shape (H, W, L) in the augmented previous image.

    ``valid`` is False behind the camera or outside the augmented previous
    image.
    """
    warp = CanonicalWarp(cam, motion, aug_t, aug_prev)
    h, w = aug_t.crop_size
    hp, wp = aug_prev.crop_size
    us = np.empty((h, w, levels.count))
    vs = np.empty_like(us)
    ok = np.empty(us.shape, dtype=bool)
    for k, d in enumerate(levels.depths):
        u, v, z = warp(d)
        us[..., k], vs[..., k] = u, v
        ok[..., k] = (z > 0) & (u >= 0) & (u <= wp - 1) & (v >= 0) & (v <= hp - 1)
    return us, vs, ok
