"""Directory-level workflows behind the command-line interface.

Each function here takes paths and configs, does one job end to end and
returns what it wrote, so the CLI stays a thin argument-parsing layer.
Volumes in a dataset directory are processed in sorted file-name order; the
last ``holdout`` of them are held out from training.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from pixseg.checkpoint import load_checkpoint, save_checkpoint
from pixseg.config import save_run_config
from pixseg.errors import ConfigError, DataError, NormalizationError, SamplingError
from pixseg.formatting import format_metric
from pixseg.metrics import MetricsReport, RegionSpec, evaluate, label_regions
from pixseg.model import ModelConfig, PixelNet
from pixseg.modes import ALL_STRATEGIES, DeficitPolicy, DistanceMode, SamplerStrategy
from pixseg.sampling import SamplePlan, derive_seed, sample_pixels
from pixseg.segmenter import Segmenter, predict_dense
from pixseg.volume import (
    VOLUME_SUFFIX,
    LabeledSlice,
    VolumeFile,
    classes_to_labels,
    list_volumes,
    load_volume,
    normalize,
    pad_slice,
    save_volume,
    select_modalities,
    volume_slices,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.pxseg"
LOSSES_NAME = "losses.csv"
RUN_CONFIG_NAME = "run_config.toml"


@dataclass
class TrainResult:
    model: PixelNet
    losses: List[float]
    train_paths: List[Path]
    holdout_paths: List[Path]


# ----------------------------------------------------------------------
# Datasets
# ----------------------------------------------------------------------
def split_dataset(data_dir: Union[str, Path], holdout: int) -> Tuple[List[Path], List[Path]]:
    """Split the sorted volumes of a directory into training and held-out lists.

    Args:
        data_dir: Directory holding the volume files
        holdout: Number of volumes, taken from the end of the sorted list, to hold out

    Returns:
        Tuple of (training paths, held-out paths)

    Raises:
        DataError: If the directory holds no volumes
        ConfigError: If the holdout would leave nothing to train on
    """
    paths = list_volumes(data_dir)
    if not paths:
        raise DataError(f"no {VOLUME_SUFFIX} volumes in {data_dir}")
    if holdout < 0 or holdout >= len(paths):
        raise ConfigError(f"holdout {holdout} must leave at least one of {len(paths)} volumes for training")
    cut = len(paths) - holdout
    return paths[:cut], paths[cut:]


def load_model_volume(path: Path, config: ModelConfig) -> VolumeFile:
    """Load a volume and keep the modalities the model was configured for."""
    volume = select_modalities(load_volume(path), config.channels)
    if volume.image.shape[0] != config.in_channels:
        raise DataError(
            f"{path}: {volume.image.shape[0]} input channels, model expects {config.in_channels}"
        )
    return volume


def fit_to_model(item: LabeledSlice, config: ModelConfig) -> LabeledSlice:
    """Pad slices smaller than the pool chain allows."""
    size = config.min_input_size
    if item.height >= size and item.width >= size:
        return item
    return pad_slice(item, max(item.height, size), max(item.width, size))


def training_slices(paths: Iterable[Path], config: ModelConfig) -> List[LabeledSlice]:
    """Every valid slice of every volume, labels mapped to class indices and padded to fit.

    Args:
        paths: Volume files to read
        config: Model configuration (channel selection, label values, minimum size)

    Returns:
        Slices in file order, then depth order
    """
    slices: List[LabeledSlice] = []
    for path in paths:
        volume = load_model_volume(path, config)
        for item in volume_slices(volume, config.stored_label_values()):
            slices.append(fit_to_model(item, config))
    if not slices:
        raise DataError("no usable training slices")
    return slices


def write_losses(path: Union[str, Path], losses: Sequence[float]) -> None:
    """Write the loss history as `step,loss` CSV."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("step", "loss"))
        for step, loss in enumerate(losses):
            writer.writerow((step, repr(float(loss))))


def train_on_directory(
    data_dir: Union[str, Path],
    out_dir: Union[str, Path],
    config: ModelConfig,
    holdout: int = 0,
) -> TrainResult:
    """Fit a fresh model on the training volumes and write its artifacts."""
    train_paths, holdout_paths = split_dataset(data_dir, holdout)
    slices = training_slices(train_paths, config)
    logger.info(
        "training on %d slices from %d volumes (%d held out)", len(slices), len(train_paths), len(holdout_paths)
    )
    segmenter = Segmenter(PixelNet(config))
    losses = segmenter.fit(slices)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(segmenter.model, out_dir / CHECKPOINT_NAME)
    write_losses(out_dir / LOSSES_NAME, losses)
    save_run_config(out_dir / RUN_CONFIG_NAME, config)
    return TrainResult(segmenter.model, losses, train_paths, holdout_paths)


# ----------------------------------------------------------------------
# Prediction
# ----------------------------------------------------------------------
def predict_slice(model: PixelNet, image: np.ndarray, valid: np.ndarray, workers: int = 1) -> np.ndarray:
    """Class indices ``[H,W]`` for one raw slice; background where undefined.

    Invalid voxels and slices that cannot be normalized are predicted as
    class 0.
    """
    config = model.config
    height, width = valid.shape
    classes = np.zeros((height, width), dtype=np.int64)
    try:
        normalized = normalize(image, valid)
    except NormalizationError as err:
        logger.warning("predicting background for a slice: %s", err)
        return classes
    item = fit_to_model(LabeledSlice(image=normalized, mask=classes, valid=valid), config)
    top = (item.height - height) // 2
    left = (item.width - width) // 2
    labels = predict_dense(model, item.image, workers=workers).labels
    classes = labels[top:top + height, left:left + width].copy()
    classes[~valid] = 0
    return classes


def predict_volume(model: PixelNet, volume: VolumeFile, workers: int = 1) -> VolumeFile:
    """Predicted stored label values for every slice of ``volume``."""
    selected = select_modalities(volume, model.config.channels)
    classes = np.zeros(volume.labels.shape, dtype=np.int64)
    for depth in range(volume.depth):
        classes[depth] = predict_slice(
            model, selected.image[:, depth].astype(np.float64), volume.valid[depth], workers
        )
    labels = classes_to_labels(classes, model.config.stored_label_values())
    return VolumeFile(image=volume.image, labels=labels, valid=volume.valid)


def predict_path(
    checkpoint: Union[str, Path],
    input_path: Union[str, Path],
    out_path: Union[str, Path],
    workers: int = 1,
) -> List[Path]:
    """Predict one volume or a directory of volumes; returns the files written."""
    model = load_checkpoint(checkpoint)
    input_path, out_path = Path(input_path), Path(out_path)
    if input_path.is_dir():
        pairs = [(path, out_path / path.name) for path in list_volumes(input_path)]
        if not pairs:
            raise DataError(f"no {VOLUME_SUFFIX} volumes in {input_path}")
    elif out_path.suffix == VOLUME_SUFFIX:
        pairs = [(input_path, out_path)]
    else:
        pairs = [(input_path, out_path / input_path.name)]

    written = []
    for source, target in pairs:
        save_volume(target, predict_volume(model, load_volume(source), workers))
        logger.info("predicted %s -> %s", source, target)
        written.append(target)
    return written


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------
def default_regions(paths: Iterable[Path]) -> List[RegionSpec]:
    """One region per foreground label value found in any of ``paths``."""
    values: set = set()
    for path in paths:
        values.update(int(v) for v in np.unique(load_volume(path).labels))
    return label_regions(values)


def evaluate_directories(
    pred_dir: Union[str, Path],
    gt_dir: Union[str, Path],
    specs: Optional[Sequence[RegionSpec]] = None,
    spacing: Sequence[float] = (),
    mode: DistanceMode = DistanceMode.SURFACE,
) -> List[MetricsReport]:
    """One report per ground-truth volume, matched to predictions by file name."""
    gt_paths = list_volumes(gt_dir)
    if not gt_paths:
        raise DataError(f"no {VOLUME_SUFFIX} volumes in {gt_dir}")
    if specs is None:
        specs = default_regions(gt_paths)
    reports = []
    for gt_path in gt_paths:
        pred_path = Path(pred_dir) / gt_path.name
        if not pred_path.exists():
            raise DataError(f"missing prediction for {gt_path.name} in {pred_dir}")
        report = evaluate(
            load_volume(pred_path).labels,
            load_volume(gt_path).labels,
            specs,
            spacing=spacing,
            case=gt_path.stem,
            mode=mode,
        )
        logger.info("evaluated %s", gt_path.stem)
        reports.append(report)
    return reports


# ----------------------------------------------------------------------
# Sampler statistics and comparison
# ----------------------------------------------------------------------
def sample_stats(
    volume: VolumeFile,
    n_total: int,
    strategy: SamplerStrategy = SamplerStrategy.CLASS_BALANCED,
    seed: int = 0,
    slice_index: Optional[int] = None,
    ignore_label: Optional[int] = None,
    deficit_policy: DeficitPolicy = DeficitPolicy.REPLACE,
) -> List[Tuple[int, int, int]]:
    """``(slice, label value, sampled count)`` rows; slice ``i`` uses ``derive_seed(seed, i)``.

    Every label value present in the volume gets a row per slice, zero when it
    was not sampled.  Slices with nothing to sample are skipped.
    """
    present = sorted(int(v) for v in np.unique(volume.labels) if ignore_label is None or v != ignore_label)
    if slice_index is not None and not 0 <= slice_index < volume.depth:
        raise ConfigError(f"slice {slice_index} outside 0..{volume.depth - 1}")
    indices = range(volume.depth) if slice_index is None else [slice_index]
    plan = SamplePlan(n_total=n_total, strategy=strategy, ignore_label=ignore_label, deficit_policy=deficit_policy)
    rows = []
    for index in indices:
        try:
            batch = sample_pixels(
                volume.labels[index].astype(np.int64),
                plan.with_seed(derive_seed(seed, index)),
                volume.valid[index],
            )
        except SamplingError as err:
            logger.warning("skipping slice %d: %s", index, err)
            continue
        rows.extend((index, value, batch.per_class_counts.get(value, 0)) for value in present)
    return rows


def write_sample_stats(target: Union[str, Path, TextIO], rows: Sequence[Tuple[int, int, int]]) -> None:
    """Write `slice,class,count` rows to a path or an open text stream."""
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as handle:
            write_sample_stats(handle, rows)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(("slice", "class", "count"))
    writer.writerows(rows)


@dataclass
class ComparisonRow:
    run: int
    sampler: SamplerStrategy
    region: str
    dice: float
    hd95: float


def _region_means(reports: Sequence[MetricsReport]) -> Dict[str, Tuple[float, float]]:
    means: Dict[str, Tuple[float, float]] = {}
    for item in reports[0].regions:
        dices = [r.region(item.region).dice for r in reports]
        hds = [r.region(item.region).hd95 for r in reports]
        hds = [h for h in hds if not math.isnan(h)]
        means[item.region] = (float(np.mean(dices)), float(np.mean(hds)) if hds else math.nan)
    return means


def compare_samplers(
    data_dir: Union[str, Path],
    config: ModelConfig,
    holdout: int = 1,
    runs: int = 1,
    specs: Optional[Sequence[RegionSpec]] = None,
    workers: int = 1,
) -> List[ComparisonRow]:
    """Train uniform and class-balanced twins per run and score them on held-out volumes.

    Both twins of run ``r`` start from the same initialization and sampling
    seed ``derive_seed(config.sgd.seed, r)``; only the sampler differs.
    """
    if holdout <= 0:
        raise ConfigError("compare-samplers needs at least one held-out volume")
    if runs <= 0:
        raise ConfigError("runs must be positive")
    train_paths, holdout_paths = split_dataset(data_dir, holdout)
    slices = training_slices(train_paths, config)
    gt_volumes = [(path, load_volume(path)) for path in holdout_paths]
    if specs is None:
        specs = default_regions(holdout_paths + train_paths)

    rows: List[ComparisonRow] = []
    for run in range(runs):
        run_seed = derive_seed(config.sgd.seed, run)
        scores: Dict[SamplerStrategy, Dict[str, Tuple[float, float]]] = {}
        for strategy in ALL_STRATEGIES:
            twin = replace(config, sampler=strategy, sgd=replace(config.sgd, seed=run_seed))
            segmenter = Segmenter(PixelNet(twin))
            segmenter.fit(slices)
            reports = [
                evaluate(
                    predict_volume(segmenter.model, volume, workers).labels,
                    volume.labels,
                    specs,
                    case=path.stem,
                )
                for path, volume in gt_volumes
            ]
            scores[strategy] = _region_means(reports)
            logger.info("run %d %s done", run, strategy.value)
        for spec in specs:
            for strategy in ALL_STRATEGIES:
                dice_value, hd95_value = scores[strategy][spec.name]
                rows.append(ComparisonRow(run, strategy, spec.name, dice_value, hd95_value))
    return rows


def write_comparison(path: Union[str, Path], rows: Sequence[ComparisonRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("run", "sampler", "region", "dice", "hd95"))
        for row in rows:
            writer.writerow((row.run, row.sampler.value, row.region, format_metric(row.dice), format_metric(row.hd95)))


__all__ = [
    "CHECKPOINT_NAME",
    "LOSSES_NAME",
    "RUN_CONFIG_NAME",
    "TrainResult",
    "ComparisonRow",
    "split_dataset",
    "training_slices",
    "train_on_directory",
    "predict_slice",
    "predict_volume",
    "predict_path",
    "default_regions",
    "evaluate_directories",
    "sample_stats",
    "write_sample_stats",
    "compare_samplers",
    "write_comparison",
]
