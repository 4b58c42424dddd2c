"""Enumerations for the switchable behaviours of the engine."""

from __future__ import annotations

from enum import Enum


class SamplerStrategy(Enum):
    UNIFORM = "uniform"
    CLASS_BALANCED = "class_balanced"

    @property
    def label(self) -> str:
        if self is SamplerStrategy.UNIFORM:
            return "Uniform"
        return "Class balanced"


class DeficitPolicy(Enum):
    """How the class-balanced sampler treats a class with fewer pixels than its quota."""

    REPLACE = "replace"
    FILL_FROM_OTHERS = "fill_from_others"

    @property
    def label(self) -> str:
        if self is DeficitPolicy.REPLACE:
            return "Resample scarce class"
        return "Fill from other classes"


class DistanceMode(Enum):
    """Point sets used by the boundary distance metrics."""

    SURFACE = "surface"
    ALL_VOXELS = "all"

    @property
    def label(self) -> str:
        if self is DistanceMode.SURFACE:
            return "Surface voxels"
        return "All voxels"


class LayerKind(Enum):
    CONV2D = "conv2d"
    RELU = "relu"
    MAXPOOL2X2 = "maxpool2x2"
    LINEAR = "linear"
    DROPOUT_OFF = "dropout-off"

    @property
    def label(self) -> str:
        if self is LayerKind.CONV2D:
            return "Conv 3x3"
        elif self is LayerKind.RELU:
            return "ReLU"
        elif self is LayerKind.MAXPOOL2X2:
            return "Max pool 2x2"
        elif self is LayerKind.LINEAR:
            return "Linear"
        else:
            return "Dropout (disabled)"


ALL_STRATEGIES = [SamplerStrategy.UNIFORM, SamplerStrategy.CLASS_BALANCED]


__all__ = [
    "SamplerStrategy",
    "DeficitPolicy",
    "DistanceMode",
    "LayerKind",
    "ALL_STRATEGIES",
]
