"""Domain errors raised across the package.

Every error carries a stable ``name`` used by the CLI when reporting
failures (exit code 1), so scripted callers can match on it.
"""

from __future__ import annotations


class MotionError(Exception):
    """Base class for all domain errors."""

    @property
    def name(self) -> str:
        return type(self).__name__


class SequenceTooShort(MotionError):
    pass


class DimensionMismatch(MotionError):
    pass


class StepOutOfRange(MotionError):
    pass


class RangeOutOfBounds(MotionError):
    pass


class SegmentTooLarge(MotionError):
    pass


class InvalidConfig(MotionError):
    pass


class TooManyFrames(MotionError):
    pass


class PoseDimExceedsMax(MotionError):
    pass


class EmptyBatch(MotionError):
    pass


class EmptyCorpus(MotionError):
    pass


class EmptyMask(MotionError):
    pass


class BoxOutOfBounds(MotionError):
    pass


class NonPositiveDepth(MotionError):
    pass


class DegeneratePart(MotionError):
    pass


class PayloadMismatch(MotionError):
    pass


class UnknownActionTag(MotionError):
    pass


class ExtractionFailed(MotionError):
    pass


class ShapeMismatch(MotionError):
    pass


class PlanMismatch(MotionError):
    pass


class TotalTooShort(MotionError):
    pass
