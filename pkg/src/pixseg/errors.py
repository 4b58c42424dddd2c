"""Exception hierarchy shared by every pixseg module.

Each concern raises its own subclass so that callers (most importantly the
command-line entry point) can decide how to react without parsing messages.
"""

from __future__ import annotations


class PixsegError(Exception):
    """Base class for every error raised on purpose by pixseg."""


class ShapeError(PixsegError, ValueError):
    """Raised when tensor or array dimensions do not line up."""


class NumericError(PixsegError, ArithmeticError):
    """Raised when a NaN or infinity shows up in a forward or backward pass."""


class ConfigError(PixsegError, ValueError):
    """Raised for invalid configuration values or unknown configuration keys."""


class DataError(PixsegError):
    """Raised when input data cannot be used (empty, corrupt, degenerate)."""


class VolumeFormatError(DataError):
    """Raised when a ``.pxvol`` file cannot be parsed."""


class CheckpointError(DataError):
    """Raised when a checkpoint file is corrupt or has an unsupported version."""


class SamplingError(DataError):
    """Raised when a pixel batch cannot be drawn from a mask."""


class NormalizationError(DataError):
    """Raised when a channel cannot be normalized (too few voxels, zero variance)."""


__all__ = [
    "PixsegError",
    "ShapeError",
    "NumericError",
    "ConfigError",
    "DataError",
    "VolumeFormatError",
    "CheckpointError",
    "SamplingError",
    "NormalizationError",
]
