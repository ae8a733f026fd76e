"""Single configuration schema holding every tunable default.

A JSON file passed with ``--config`` may override any subset of keys,
section by section::

    {
      "depth":  {"d_min": 2.0, "d_max": 59.6, "levels": 288, "cost": "zncc",
                 "patch": 5, "temperature": 0.1, "mode": "argmax"},
      "fusion": {"sharpness": 16.0, "camera_height": 1.65, "exclusion_px": 1.0},
      "loss":   {"fg_weight": 5.0, "bg_weight": 1.0, "gamma": 2.0},
      "pose":   {"alpha": 0.85, "lambda_s": 0.001, "lambda_r": 1.0,
                 "pyramid_levels": 4, "max_iterations": 100, ...},
      "voxel":  {"x_range": [-30, 30], "y_range": [-1, 3],
                 "z_range": [2, 59.6], "edge": 0.2},
      "threads": 1
    }

Unknown keys are rejected so that typos do not silently fall back to
defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError
from .fusion import DepthLossConfig
from .plane_sweep import COST_KINDS, DepthLevels
from .pose import PoseLossConfig
from .voxel import VoxelSpec


@dataclass(frozen=True)
class DepthConfig:
    d_min: float = 2.0
    d_max: float = 59.6
    levels: int = 288
    cost: str = "zncc"
    patch: int = 5
    temperature: float = 0.1
    mode: str = "argmax"

    def __post_init__(self):
        if self.cost not in COST_KINDS:
            raise InputError(f"cost must be one of {COST_KINDS}")
        if self.mode not in ("argmax", "expectation"):
            raise InputError("mode must be argmax or expectation")
        if self.patch < 1 or self.patch % 2 == 0:
            raise InputError("patch must be a positive odd integer")
        if not self.temperature > 0:
            raise InputError("temperature must be positive")

    def depth_levels(self) -> DepthLevels:
        return DepthLevels.from_range(self.d_min, self.d_max, self.levels)


@dataclass(frozen=True)
class FusionConfig:
    # mono prior half-width in bins; a one-bin prior is so peaked that it
    # outvotes confident stereo matches
    sharpness: float = 16.0
    camera_height: float = 1.65
    exclusion_px: float = 1.0


@dataclass(frozen=True)
class Config:
    depth: DepthConfig = field(default_factory=DepthConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss: DepthLossConfig = field(default_factory=DepthLossConfig)
    pose: PoseLossConfig = field(default_factory=PoseLossConfig)
    voxel: VoxelSpec = field(default_factory=VoxelSpec)
    threads: int = 1

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(val) if dataclasses.is_dataclass(val) else val
        return out

    @classmethod
    def from_dict(cls, data: dict) -> Config:
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(names)
        if unknown:
            raise InputError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            if name == "threads":
                if not isinstance(value, int) or value < 1:
                    raise InputError("threads must be a positive integer")
                kwargs[name] = value
                continue
            if not isinstance(value, dict):
                raise InputError(f"config section {name!r} must be an object")
            default = names[name].default_factory()
            allowed = {f.name for f in dataclasses.fields(default)}
            bad = set(value) - allowed
            if bad:
                raise InputError(f"unknown keys in {name!r}: {sorted(bad)}")
            value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
            try:
                kwargs[name] = dataclasses.replace(default, **value)
            except TypeError as exc:
                raise InputError(f"bad value in {name!r}: {exc}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> Config:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise InputError("config root must be an object")
        return cls.from_dict(data)
