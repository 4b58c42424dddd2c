"""Hypercolumn descriptors: per-pixel concatenation of multi-scale features.

Each tapped feature map has an integer stride relative to the input.  An input
pixel ``(row, col)`` maps to the continuous feature-map position::

    row_f = (row + 0.5) / stride - 0.5      (same for col)

clamped to the map.  The response at that position is the bilinear blend of
the four surrounding cells, and the descriptor is the level-major
concatenation of those responses.  Sparse training and dense inference both go
through :func:`extract_hypercolumns`, so the two paths cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from pixseg.errors import ShapeError
from pixseg.tensor import Tensor, concat

Pixel = Tuple[int, int]


@dataclass
class FeatureLevel:
    feature_map: Tensor
    stride: int

    @property
    def channels(self) -> int:
        return self.feature_map.shape[0]


@dataclass
class FeaturePyramid:
    """Ordered feature maps tapped from the backbone."""

    levels: List[FeatureLevel]
    input_height: int
    input_width: int

    def __post_init__(self) -> None:
        if self.input_height <= 0 or self.input_width <= 0:
            raise ShapeError(
                f"input size must be positive, got {self.input_height}x{self.input_width}"
            )
        previous = 0
        for index, level in enumerate(self.levels):
            stride = level.stride
            if stride <= 0 or stride & (stride - 1):
                raise ShapeError(f"level {index}: stride must be a power of two, got {stride}")
            if stride < previous:
                raise ShapeError(f"level {index}: strides must not decrease ({stride} < {previous})")
            previous = stride
            fmap = level.feature_map
            if fmap.ndim != 3:
                raise ShapeError(f"level {index}: feature map must be [C,H,W], got rank {fmap.ndim}")
            expected = (self.input_height // stride, self.input_width // stride)
            if fmap.shape[1:] != expected:
                raise ShapeError(
                    f"level {index}: spatial dims {fmap.shape[1:]} do not match "
                    f"stride {stride} on a {self.input_height}x{self.input_width} input "
                    f"(expected {expected})"
                )

    @property
    def width(self) -> int:
        """Hypercolumn length ``F``, the sum of tapped channel counts."""
        return sum(level.channels for level in self.levels)


@dataclass
class Hypercolumn:
    vector: Tensor
    pixel: Pixel = field(default=(0, 0))


def map_coordinate(
    pixel: Pixel, stride: int, map_height: int, map_width: int
) -> Tuple[float, float]:
    """Center-aligned input-to-feature-map mapping, clamped to the map."""
    rows, cols = map_coordinates(
        np.array([pixel[0]]), np.array([pixel[1]]), stride, map_height, map_width
    )
    return float(rows[0]), float(cols[0])


def map_coordinates(
    rows: np.ndarray, cols: np.ndarray, stride: int, map_height: int, map_width: int
) -> Tuple[np.ndarray, np.ndarray]:
    rows_f = (np.asarray(rows, dtype=np.float64) + 0.5) / stride - 0.5
    cols_f = (np.asarray(cols, dtype=np.float64) + 0.5) / stride - 0.5
    return (
        np.clip(rows_f, 0.0, map_height - 1),
        np.clip(cols_f, 0.0, map_width - 1),
    )


def bilinear_gather(feature_map: Tensor, rows_f: np.ndarray, cols_f: np.ndarray) -> Tensor:
    """Sample ``[C,H,W]`` at P continuous positions, giving ``[P,C]``."""
    if feature_map.ndim != 3:
        raise ShapeError(f"feature map must be [C,H,W], got rank {feature_map.ndim}")
    channels, height, width = feature_map.shape
    rows_f = np.asarray(rows_f, dtype=np.float64).reshape(-1)
    cols_f = np.asarray(cols_f, dtype=np.float64).reshape(-1)
    outside = (rows_f < 0) | (rows_f > height - 1) | (cols_f < 0) | (cols_f > width - 1)
    if np.any(outside):
        at = int(np.argmax(outside))
        raise ShapeError(
            f"sample position ({rows_f[at]}, {cols_f[at]}) outside "
            f"[0,{height - 1}]x[0,{width - 1}]"
        )

    r0 = np.floor(rows_f).astype(np.int64)
    c0 = np.floor(cols_f).astype(np.int64)
    r1 = np.minimum(r0 + 1, height - 1)
    c1 = np.minimum(c0 + 1, width - 1)
    dr = rows_f - r0
    dc = cols_f - c0
    corners = (
        (r0, c0, (1.0 - dr) * (1.0 - dc)),
        (r0, c1, (1.0 - dr) * dc),
        (r1, c0, dr * (1.0 - dc)),
        (r1, c1, dr * dc),
    )
    fmap = feature_map.data
    out = np.zeros((rows_f.shape[0], channels))
    for r, c, weight in corners:
        out += fmap[:, r, c].T * weight[:, None]

    def backward(g: np.ndarray):
        grad = np.zeros((channels, height, width))
        for r, c, weight in corners:
            flat_index = r * width + c
            for channel in range(channels):
                np.add.at(grad[channel].reshape(-1), flat_index, g[:, channel] * weight)
        return (grad,)

    return Tensor.from_op(out, (feature_map,), backward, "bilinear_gather")


def bilinear_sample(feature_map: Tensor, at: Tuple[float, float]) -> Tensor:
    """Bilinear response ``[C]`` of ``feature_map`` at one continuous position."""
    sampled = bilinear_gather(feature_map, np.array([at[0]]), np.array([at[1]]))
    return sampled.reshape(feature_map.shape[0])


def _pixel_arrays(pixels: Sequence[Pixel] | np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    coords = np.asarray(pixels, dtype=np.int64)
    if coords.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"pixels must be a list of (row, col) pairs, got shape {coords.shape}")
    return coords[:, 0], coords[:, 1]


def extract_hypercolumns(pyramid: FeaturePyramid, pixels: Sequence[Pixel] | np.ndarray) -> Tensor:
    """Hypercolumns for every pixel, shape ``[P, F]``, level-major columns."""
    if not pyramid.levels:
        raise ShapeError("feature pyramid has no levels")
    rows, cols = _pixel_arrays(pixels)
    if rows.size == 0:
        return Tensor(np.zeros((0, pyramid.width)))
    bad = (rows < 0) | (rows >= pyramid.input_height) | (cols < 0) | (cols >= pyramid.input_width)
    if np.any(bad):
        at = int(np.argmax(bad))
        raise ShapeError(
            f"pixel ({rows[at]}, {cols[at]}) outside the "
            f"{pyramid.input_height}x{pyramid.input_width} input"
        )
    parts = []
    for level in pyramid.levels:
        _, height, width = level.feature_map.shape
        rows_f, cols_f = map_coordinates(rows, cols, level.stride, height, width)
        parts.append(bilinear_gather(level.feature_map, rows_f, cols_f))
    return parts[0] if len(parts) == 1 else concat(parts, axis=1)


def hypercolumn_at(pyramid: FeaturePyramid, pixel: Pixel) -> Hypercolumn:
    vector = extract_hypercolumns(pyramid, [pixel]).reshape(pyramid.width)
    return Hypercolumn(vector=vector, pixel=(int(pixel[0]), int(pixel[1])))


def row_block_pixels(row_start: int, row_stop: int, width: int) -> np.ndarray:
    """All ``(row, col)`` pairs of rows ``[row_start, row_stop)`` in raster order."""
    rows, cols = np.meshgrid(
        np.arange(row_start, row_stop), np.arange(width), indexing="ij"
    )
    return np.stack([rows.reshape(-1), cols.reshape(-1)], axis=1)


__all__ = [
    "FeatureLevel",
    "FeaturePyramid",
    "Hypercolumn",
    "map_coordinate",
    "map_coordinates",
    "bilinear_gather",
    "bilinear_sample",
    "extract_hypercolumns",
    "hypercolumn_at",
    "row_block_pixels",
]
