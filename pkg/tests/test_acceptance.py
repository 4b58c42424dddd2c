"""Long end-to-end runs on desk-scale synthetic data (``pytest -m slow``)."""

from dataclasses import replace

import numpy as np
import pytest

from pixseg.metrics import evaluate, label_regions
from pixseg.model import ModelConfig
from pixseg.modes import SamplerStrategy
from pixseg.pipeline import compare_samplers, predict_volume, train_on_directory
from pixseg.synth import SynthConfig, generate_synthetic
from pixseg.volume import load_volume

pytestmark = pytest.mark.slow

FOREGROUND = label_regions([1, 2, 3])


@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    generate_synthetic(SynthConfig(n_volumes=6, slices_per_volume=10, height=64, width=64), out)
    return out


# About 98% background, and the last class cut to a few dozen voxels per slice
# that holds it: a uniform batch of 64 pixels rarely contains one.
@pytest.fixture(scope="module")
def skewed_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("skewed")
    config = SynthConfig(n_volumes=6, slices_per_volume=10, height=64, width=64, class_fractions=(0.01, 0.005, 0.003))
    generate_synthetic(config, out)
    return out


def test_default_model_segments_held_out_slices(desk_dataset, tmp_path):
    result = train_on_directory(desk_dataset, tmp_path / "model", ModelConfig(), holdout=2)
    assert sum(load_volume(p).depth for p in result.holdout_paths) == 20
    dices = []
    for path in result.holdout_paths:
        volume = load_volume(path)
        predicted = predict_volume(result.model, volume).labels
        report = evaluate(predicted, volume.labels, FOREGROUND)
        dices.extend(item.dice for item in report.regions)
    assert np.mean(dices) >= 0.80


def test_class_balanced_sampler_helps_the_rarest_class(skewed_dataset):
    config = ModelConfig(
        stages=((1, 16), (1, 32), (1, 64)),
        iterations=300,
        n_sample_pixels=64,
        sampler=SamplerStrategy.CLASS_BALANCED,
    )
    rows = compare_samplers(skewed_dataset, replace(config, log_every=0), holdout=2, runs=10, specs=FOREGROUND[-1:])
    by_run = {}
    for row in rows:
        by_run.setdefault(row.run, {})[row.sampler] = row.dice
    gains = [scores[SamplerStrategy.CLASS_BALANCED] - scores[SamplerStrategy.UNIFORM] for scores in by_run.values()]
    assert len(gains) == 10
    assert sum(gain >= 0 for gain in gains) >= 7
    assert np.mean(gains) > 0
