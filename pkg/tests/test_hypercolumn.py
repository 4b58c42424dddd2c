"""Tests for hypercolumn extraction."""

import math

import numpy as np
import pytest

from pixseg.errors import ShapeError
from pixseg.gradcheck import check_gradients
from pixseg.hypercolumn import (
    FeatureLevel,
    FeaturePyramid,
    bilinear_sample,
    extract_hypercolumns,
    hypercolumn_at,
    map_coordinate,
    row_block_pixels,
)
from pixseg.tensor import Tensor


def _pyramid(rng, height=8, width=8, spec=((2, 1), (3, 2), (4, 4)), requires_grad=False):
    levels = [
        FeatureLevel(
            Tensor(rng.standard_normal((c, height // s, width // s)), requires_grad=requires_grad), s
        )
        for c, s in spec
    ]
    return FeaturePyramid(levels, height, width)


def _oracle(pyramid, row, col):
    """Straight-line per-pixel, per-level bilinear evaluation."""
    parts = []
    for level in pyramid.levels:
        fmap = level.feature_map.data
        _, h, w = fmap.shape
        rf = min(max((row + 0.5) / level.stride - 0.5, 0.0), h - 1)
        cf = min(max((col + 0.5) / level.stride - 0.5, 0.0), w - 1)
        r0, c0 = int(math.floor(rf)), int(math.floor(cf))
        r1, c1 = min(r0 + 1, h - 1), min(c0 + 1, w - 1)
        dr, dc = rf - r0, cf - c0
        parts.append(
            fmap[:, r0, c0] * (1 - dr) * (1 - dc)
            + fmap[:, r0, c1] * (1 - dr) * dc
            + fmap[:, r1, c0] * dr * (1 - dc)
            + fmap[:, r1, c1] * dr * dc
        )
    return np.concatenate(parts)


def test_map_coordinate_examples():
    assert map_coordinate((0, 0), 1, 8, 8) == (0.0, 0.0)
    assert map_coordinate((3, 3), 2, 4, 4) == (1.25, 1.25)
    assert map_coordinate((0, 0), 4, 2, 2) == (0.0, 0.0)


def test_map_coordinate_clamps_far_edge():
    assert map_coordinate((7, 7), 4, 2, 2) == (1.0, 1.0)


def test_bilinear_exact_on_grid():
    rng = np.random.default_rng(0)
    fmap = Tensor(rng.standard_normal((3, 4, 5)))
    np.testing.assert_array_equal(bilinear_sample(fmap, (1.0, 2.0)).data, fmap.data[:, 1, 2])


def test_bilinear_between_cells():
    fmap = Tensor([[[0.0, 1.0], [2.0, 3.0]]])
    assert bilinear_sample(fmap, (0.5, 0.5)).item() == pytest.approx(1.5, abs=1e-15)
    assert bilinear_sample(fmap, (0.0, 0.5)).item() == pytest.approx(0.5, abs=1e-15)
    assert bilinear_sample(fmap, (1.0, 1.0)).item() == 3.0


def test_bilinear_rejects_outside_positions():
    fmap = Tensor(np.zeros((1, 2, 2)))
    with pytest.raises(ShapeError, match="outside"):
        bilinear_sample(fmap, (1.5, 0.0))
    with pytest.raises(ShapeError):
        bilinear_sample(fmap, (0.0, -0.1))


def test_single_level_stride_one_is_exact():
    rng = np.random.default_rng(1)
    pyramid = _pyramid(rng, spec=((4, 1),))
    out = extract_hypercolumns(pyramid, [(2, 5), (7, 0)])
    fmap = pyramid.levels[0].feature_map.data
    np.testing.assert_array_equal(out.data[0], fmap[:, 2, 5])
    np.testing.assert_array_equal(out.data[1], fmap[:, 7, 0])


def test_two_levels_are_level_major():
    rng = np.random.default_rng(2)
    pyramid = _pyramid(rng, spec=((2, 1), (3, 2)))
    assert pyramid.width == 5
    out = extract_hypercolumns(pyramid, [(3, 4)])
    assert out.shape == (1, 5)
    np.testing.assert_array_equal(out.data[0, :2], pyramid.levels[0].feature_map.data[:, 3, 4])


@pytest.mark.parametrize("seed", range(3))
def test_matches_per_pixel_oracle(seed):
    rng = np.random.default_rng(seed)
    pyramid = _pyramid(rng)
    pixels = rng.integers(0, 8, size=(10, 2))
    out = extract_hypercolumns(pyramid, pixels)
    for index, (row, col) in enumerate(pixels):
        np.testing.assert_allclose(out.data[index], _oracle(pyramid, row, col), rtol=0, atol=1e-12)


def test_batched_equals_one_by_one():
    rng = np.random.default_rng(4)
    pyramid = _pyramid(rng)
    pixels = row_block_pixels(0, 8, 8)
    dense = extract_hypercolumns(pyramid, pixels).data
    for index, (row, col) in enumerate(pixels):
        single = hypercolumn_at(pyramid, (row, col))
        assert single.pixel == (row, col)
        np.testing.assert_allclose(dense[index], single.vector.data, rtol=0, atol=1e-12)


def test_row_block_pixels_raster_order():
    np.testing.assert_array_equal(row_block_pixels(1, 3, 2), [[1, 0], [1, 1], [2, 0], [2, 1]])


def test_empty_pixel_list_gives_empty_matrix():
    rng = np.random.default_rng(5)
    pyramid = _pyramid(rng)
    assert extract_hypercolumns(pyramid, []).shape == (0, 9)


def test_pixel_outside_input_rejected():
    rng = np.random.default_rng(6)
    pyramid = _pyramid(rng)
    with pytest.raises(ShapeError, match="outside"):
        extract_hypercolumns(pyramid, [(8, 0)])
    with pytest.raises(ShapeError):
        extract_hypercolumns(pyramid, [(0, -1)])


def test_pyramid_validation():
    with pytest.raises(ShapeError, match="power of two"):
        FeaturePyramid([FeatureLevel(Tensor(np.zeros((1, 3, 3))), 3)], 9, 9)
    with pytest.raises(ShapeError, match="do not match"):
        FeaturePyramid([FeatureLevel(Tensor(np.zeros((1, 3, 3))), 2)], 8, 8)
    with pytest.raises(ShapeError, match="decrease"):
        FeaturePyramid(
            [
                FeatureLevel(Tensor(np.zeros((1, 4, 4))), 2),
                FeatureLevel(Tensor(np.zeros((1, 8, 8))), 1),
            ],
            8,
            8,
        )
    with pytest.raises(ShapeError):
        extract_hypercolumns(FeaturePyramid([], 4, 4), [(0, 0)])


@pytest.mark.parametrize("seed", range(3))
def test_gradient_reaches_every_level(seed):
    rng = np.random.default_rng(seed)
    pyramid = _pyramid(rng, requires_grad=True)
    pixels = rng.integers(0, 8, size=(6, 2))
    weights = Tensor(rng.standard_normal((6, pyramid.width)))

    def loss():
        return (extract_hypercolumns(pyramid, pixels) * weights).sum()

    named = [(f"level{i}", level.feature_map) for i, level in enumerate(pyramid.levels)]
    for name, error in check_gradients(loss, named).items():
        assert error < 1e-4, name
