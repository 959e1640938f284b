"""Exception types raised across the package."""

from __future__ import annotations


class SwarmNavError(Exception):
    """Base class for all package-specific errors."""


class DensityInfeasible(SwarmNavError):
    """Obstacle placement could not reach the requested density within budget."""


class FormatVersionMismatch(SwarmNavError):
    """A serialized file declares a format version this code does not read."""


class CorruptFile(SwarmNavError):
    """A serialized file failed to parse; ``offset`` is the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class TooManyAgents(SwarmNavError):
    """More agents requested than the map has spawn points."""


class DimensionMismatch(SwarmNavError):
    """An input collection has the wrong length for the world's agent count."""


class NonFiniteAction(SwarmNavError):
    """A control action contained NaN or infinity."""


class ShapeMismatch(SwarmNavError):
    """Tensor shapes are incompatible; the message carries both shapes."""


class HeadDivisibility(SwarmNavError):
    """Attention width is not divisible by the head count."""


class NotScalarLoss(SwarmNavError):
    """Gradient was requested for a non-scalar value."""


class WindowTooLong(SwarmNavError):
    """A temporal window exceeds the configured horizon."""


class LengthMismatch(SwarmNavError):
    """Aligned sequences have different lengths."""


class EmptyBatch(SwarmNavError):
    """A loss was requested on an empty rollout batch."""


class NonFiniteLoss(SwarmNavError):
    """Training aborted because a loss became NaN or infinite."""


class ConfigMismatch(SwarmNavError):
    """A checkpoint, map, or run configuration is incompatible with the request."""


class ConflictingFlags(SwarmNavError):
    """Mutually exclusive ablation flags were combined."""


class InsufficientMaps(SwarmNavError):
    """A sweep asked for more training maps than were provided."""
