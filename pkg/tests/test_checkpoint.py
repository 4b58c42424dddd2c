"""Tests for checkpoint save/load."""

import struct

import numpy as np
import pytest

from pixseg.checkpoint import CHECKPOINT_MAGIC, decode_entries, load_checkpoint, save_checkpoint
from pixseg.errors import CheckpointError
from pixseg.model import ModelConfig, PixelNet
from pixseg.segmenter import Segmenter, predict_dense
from pixseg.volume import LabeledSlice

CONFIG = ModelConfig(
    in_channels=1,
    stages=((1, 3), (1, 4)),
    tap_stages=(0, 1),
    mlp_widths=(5,),
    n_classes=2,
    n_sample_pixels=8,
    iterations=3,
    label_values=(0, 4),
    log_every=0,
)


def _trained_model():
    rng = np.random.default_rng(0)
    item = LabeledSlice(rng.standard_normal((1, 8, 8)), rng.integers(0, 2, size=(8, 8)), np.ones((8, 8), dtype=bool))
    segmenter = Segmenter(PixelNet(CONFIG))
    segmenter.fit([item])
    return segmenter.model, item


def test_round_trip_predicts_bitwise_identically(tmp_path):
    model, item = _trained_model()
    path = tmp_path / "model.pxseg"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    before = predict_dense(model, item.image)
    after = predict_dense(loaded, item.image)
    np.testing.assert_array_equal(after.logits, before.logits)
    for name, param in model.named_parameters():
        np.testing.assert_array_equal(loaded.params[name].data, param.data)


def test_truncated_file_is_an_error(tmp_path):
    model, _ = _trained_model()
    path = tmp_path / "model.pxseg"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    for cut in (len(raw) - 3, len(CHECKPOINT_MAGIC) + 2, 30):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_unsupported_version(tmp_path):
    model, _ = _trained_model()
    path = tmp_path / "model.pxseg"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[5:6] = b"2"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="unsupported version"):
        load_checkpoint(path)


def test_bad_magic_and_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="bad magic"):
        decode_entries(b"NOTACKPT")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.pxseg")


def test_missing_config_entry(tmp_path):
    path = tmp_path / "model.pxseg"
    path.write_bytes(CHECKPOINT_MAGIC)
    with pytest.raises(CheckpointError, match="__config__"):
        load_checkpoint(path)


def test_huge_dimensions_are_a_checkpoint_error(tmp_path):
    """Test dims whose product wraps a 64-bit integer are rejected, not reshaped."""
    raw = CHECKPOINT_MAGIC + struct.pack("<I", 1) + b"w" + struct.pack("<4I", 3, 2**31, 2**31, 2**31)
    with pytest.raises(CheckpointError, match="too short"):
        decode_entries(raw)
    path = tmp_path / "model.pxseg"
    path.write_bytes(raw)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
