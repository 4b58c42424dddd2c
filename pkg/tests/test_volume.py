"""Tests for the PXVOL reader/writer and slice preparation."""

import numpy as np
import pytest

from pixseg.errors import ConfigError, DataError, NormalizationError, ShapeError, VolumeFormatError
from pixseg.volume import (
    VOLUME_MAGIC,
    LabeledSlice,
    VolumeFile,
    classes_to_labels,
    labels_to_classes,
    list_volumes,
    load_volume,
    normalize,
    pad_slice,
    parse_volume,
    save_volume,
    select_modalities,
    volume_slices,
)


def _volume(rng, channels=2, depth=3, height=4, width=5):
    labels = rng.choice([0, 1, 2, 4], size=(depth, height, width)).astype(np.uint8)
    valid = rng.random((depth, height, width)) > 0.1
    return VolumeFile(rng.standard_normal((channels, depth, height, width)), labels, valid)


def test_save_and_load_preserve_payloads(tmp_path):
    rng = np.random.default_rng(0)
    volume = _volume(rng)
    path = tmp_path / "nested" / "case.pxvol"
    save_volume(path, volume)
    loaded = load_volume(path)
    assert loaded.dims == (2, 3, 4, 5)
    np.testing.assert_array_equal(loaded.image, volume.image)
    np.testing.assert_array_equal(loaded.labels, volume.labels)
    np.testing.assert_array_equal(loaded.valid, volume.valid)


def test_wrong_magic_is_rejected(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "case.pxvol"
    save_volume(path, _volume(rng))
    raw = bytearray(path.read_bytes())
    raw[0:1] = b"Q"
    with pytest.raises(VolumeFormatError, match="magic"):
        parse_volume(bytes(raw))


def test_dims_must_match_payload(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "case.pxvol"
    save_volume(path, _volume(rng))
    raw = path.read_bytes()
    with pytest.raises(VolumeFormatError, match="require"):
        parse_volume(raw[:-1])
    with pytest.raises(VolumeFormatError, match="require"):
        parse_volume(raw + b"\0")
    with pytest.raises(VolumeFormatError, match="truncated"):
        parse_volume(VOLUME_MAGIC + b"\1\0")


def test_validity_bytes_must_be_binary(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "case.pxvol"
    save_volume(path, _volume(rng))
    raw = bytearray(path.read_bytes())
    raw[-1] = 2
    with pytest.raises(VolumeFormatError, match="0/1"):
        parse_volume(bytes(raw))


def test_missing_file_is_a_format_error(tmp_path):
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "absent.pxvol")


def test_volume_shape_checks():
    with pytest.raises(ShapeError):
        VolumeFile(np.zeros((2, 3, 4)), np.zeros((3, 4)), np.ones((3, 4)))
    with pytest.raises(ShapeError):
        VolumeFile(np.zeros((1, 2, 3, 4)), np.zeros((2, 3, 5)), np.ones((2, 3, 5)))


def test_list_volumes_sorted(tmp_path):
    rng = np.random.default_rng(4)
    for name in ("b.pxvol", "a.pxvol"):
        save_volume(tmp_path / name, _volume(rng))
    (tmp_path / "notes.txt").write_text("x")
    assert [p.name for p in list_volumes(tmp_path)] == ["a.pxvol", "b.pxvol"]
    with pytest.raises(DataError):
        list_volumes(tmp_path / "missing")


def test_normalize_three_values():
    out = normalize(np.array([[[1.0, 2.0, 3.0]]]), np.ones((1, 3), dtype=bool))
    std = np.sqrt(2.0 / 3.0)
    np.testing.assert_allclose(out[0, 0], [-1 / std, 0.0, 1 / std], rtol=0, atol=1e-12)


def test_normalize_matches_two_pass_oracle_and_zeroes_invalid():
    rng = np.random.default_rng(5)
    image = rng.standard_normal((2, 6, 6)) * 3 + 1
    valid = rng.random((6, 6)) > 0.3
    out = normalize(image, valid)
    for channel in range(2):
        values = image[channel][valid]
        mean = sum(values) / len(values)
        std = (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5
        np.testing.assert_allclose(out[channel][valid], (values - mean) / std, rtol=0, atol=1e-12)
        assert np.all(out[channel][~valid] == 0.0)


def test_normalize_is_idempotent():
    rng = np.random.default_rng(6)
    valid = np.ones((5, 5), dtype=bool)
    once = normalize(rng.standard_normal((3, 5, 5)), valid)
    np.testing.assert_allclose(normalize(once, valid), once, rtol=0, atol=1e-9)


def test_normalize_errors():
    with pytest.raises(NormalizationError, match="zero variance"):
        normalize(np.full((1, 3, 3), 4.0), np.ones((3, 3), dtype=bool))
    single = np.zeros((3, 3), dtype=bool)
    single[1, 1] = True
    with pytest.raises(NormalizationError, match="at least 2"):
        normalize(np.arange(9.0).reshape(1, 3, 3), single)
    with pytest.raises(ShapeError):
        normalize(np.zeros((1, 3, 3)), np.ones((2, 2), dtype=bool))


def test_select_modalities_reorders_channels():
    rng = np.random.default_rng(7)
    volume = _volume(rng, channels=3)
    picked = select_modalities(volume, [2, 0])
    np.testing.assert_array_equal(picked.image[0], volume.image[2])
    np.testing.assert_array_equal(picked.image[1], volume.image[0])
    assert select_modalities(volume, None) is volume
    with pytest.raises(ConfigError):
        select_modalities(volume, [3])


def test_label_value_mapping():
    labels = np.array([[0, 4], [2, 1]], dtype=np.uint8)
    classes = labels_to_classes(labels, [0, 1, 2, 4])
    np.testing.assert_array_equal(classes, [[0, 3], [2, 1]])
    np.testing.assert_array_equal(classes_to_labels(classes, [0, 1, 2, 4]), labels)
    with pytest.raises(DataError, match="4"):
        labels_to_classes(labels, [0, 1, 2])


def test_pad_slice_centers_and_marks_padding_invalid():
    item = LabeledSlice(np.ones((1, 2, 3)), np.ones((2, 3)), np.ones((2, 3), dtype=bool))
    padded = pad_slice(item, 4, 4)
    assert padded.image.shape == (1, 4, 4)
    assert padded.valid.sum() == 6
    assert padded.valid[1, 0] and not padded.valid[0, 0]
    with pytest.raises(ShapeError):
        pad_slice(item, 1, 4)


def test_volume_slices_skip_unnormalizable_slices():
    rng = np.random.default_rng(8)
    volume = _volume(rng, depth=3)
    volume.valid[1] = False
    slices = list(volume_slices(volume, label_values=[0, 1, 2, 4]))
    assert len(slices) == 2
    assert slices[0].mask.max() <= 3
    for item in slices:
        item.check_classes(4)


def test_check_classes_range():
    item = LabeledSlice(np.zeros((1, 2, 2)), np.array([[0, 5], [1, 1]]), np.ones((2, 2), dtype=bool))
    with pytest.raises(DataError):
        item.check_classes(4)
