"""Shared fixtures and random generators for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from dfm.geometry import Intrinsics, RigidMotion, UnitQuaternion


def random_rotation(rng: np.random.Generator, max_angle: float = math.pi) -> UnitQuaternion:
    axis = rng.normal(size=3)
    return UnitQuaternion.from_axis_angle(axis, rng.uniform(0, max_angle))


def random_motion(rng: np.random.Generator, max_t: float = 2.0, max_angle_deg: float = 5.0) -> RigidMotion:
    t = rng.normal(size=3)
    t *= rng.uniform(0, max_t) / np.linalg.norm(t)
    return RigidMotion(random_rotation(rng, math.radians(max_angle_deg)), tuple(t))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def cam700():
    return Intrinsics(700.0, 700.0, 600.0, 180.0)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line, then assert it passed."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
