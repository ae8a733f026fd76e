"""Exception hierarchy shared by every dfm module.

Each error carries an ``exit_code`` so the CLI can map failures onto its
documented process exit status (2 = bad input, 3 = numerical failure).
"""

from __future__ import annotations


class DfmError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 2


class InputError(DfmError):
    """Inputs violate a precondition (shape, range, file format)."""

    exit_code = 2


class NumericalError(DfmError):
    """A computation is ill-conditioned or failed to converge."""

    exit_code = 3


# geometry
class NonPositiveDepth(InputError):
    pass


class BehindCamera(NumericalError):
    pass


class ZeroQuaternion(NumericalError):
    pass


# closed-form depth
class ZeroDisparity(NumericalError):
    pass


class NonPhysicalDepth(NumericalError):
    """Depth came out <= 0; the offending value is kept on ``depth``."""

    def __init__(self, message: str, depth: float):
        super().__init__(message)
        self.depth = depth


class DegenerateDenominator(NumericalError):
    pass


class NoValidSolution(DegenerateDenominator):
    """Neither the u- nor the v-derived depth expression is usable."""


# images, volumes, fusion
class ImageSizeMismatch(InputError):
    pass


class CropOutOfBounds(InputError):
    pass


class GridMismatch(InputError):
    pass


class NoValidPixels(InputError):
    pass


class EmptyMask(InputError):
    pass


# pose optimisation
class Diverged(NumericalError):
    pass


class DegenerateOverlap(NumericalError):
    pass


# synthetic scenes
class InsufficientVisibility(InputError):
    pass


# file formats
class MalformedLine(InputError):
    """A text record could not be parsed.

    Attributes:
        line: 1-based line number in the source text.
        reason: Short machine-readable reason code.
    """

    def __init__(self, line: int, reason: str, detail: str = ""):
        msg = f"line {line}: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.line = line
        self.reason = reason


class MissingCamera(InputError):
    pass


class BadMagic(InputError):
    pass


class TruncatedData(InputError):
    pass
