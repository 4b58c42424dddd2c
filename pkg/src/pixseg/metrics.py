"""Overlap and boundary-distance metrics for binary and composite regions.

Overlap metrics come from the confusion counts.  Boundary metrics measure
Euclidean distances (scaled by voxel spacing) from each surface voxel of one
mask to the nearest surface voxel of the other:

* ``hd95``: the larger of the two directed 95th percentiles, nearest-rank
  convention (the ``ceil(0.95 n)``-th smallest distance);
* ``hausdorff``: the larger of the two directed maxima;
* ``asd``: the mean of both directed distance lists pooled together.

Undefined values are reported as ``nan`` and listed in the row's ``flags``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from pixseg.errors import ConfigError, ShapeError
from pixseg.formatting import format_mean_std, format_metric
from pixseg.modes import DistanceMode

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "case", "region", "dice", "sensitivity", "specificity",
    "precision", "recall", "hd95", "asd", "flags",
)
HEADLINE_COLUMNS = ("Dice", "Hausdorff", "Avg. Dist.", "Precision", "Recall")
SUMMARY_METRICS = ("dice", "sensitivity", "specificity", "precision", "recall", "hd95", "hausdorff", "asd")


@dataclass
class BinaryMask:
    grid: np.ndarray
    spacing: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.size == 0:
            raise ShapeError("binary mask grid must be non-empty")
        if not self.spacing:
            self.spacing = (1.0,) * self.grid.ndim
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != self.grid.ndim:
            raise ShapeError(f"spacing has {len(self.spacing)} entries for a {self.grid.ndim}-D grid")
        if any(not s > 0 for s in self.spacing):
            raise ShapeError(f"spacing must be positive, got {self.spacing}")

    @property
    def empty(self) -> bool:
        return not self.grid.any()


@dataclass(frozen=True)
class RegionSpec:
    name: str
    labels: frozenset

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", frozenset(int(v) for v in self.labels))
        if not self.name:
            raise ConfigError("region name must be non-empty")
        if not self.labels:
            raise ConfigError(f"region {self.name!r} needs at least one label")


BRATS_REGIONS = (
    RegionSpec("ET", frozenset({4})),
    RegionSpec("WT", frozenset({1, 2, 4})),
    RegionSpec("TC", frozenset({1, 4})),
)


@dataclass
class RegionMetrics:
    region: str
    dice: float
    sensitivity: float
    specificity: float
    precision: float
    recall: float
    hd95: float
    hausdorff: float
    asd: float
    flags: List[str] = field(default_factory=list)

    def headline_row(self) -> Dict[str, float]:
        return {
            "Dice": self.dice,
            "Hausdorff": self.hausdorff,
            "Avg. Dist.": self.asd,
            "Precision": self.precision,
            "Recall": self.recall,
        }


@dataclass
class MetricsReport:
    case: str
    regions: List[RegionMetrics]

    def region(self, name: str) -> RegionMetrics:
        for item in self.regions:
            if item.region == name:
                return item
        raise KeyError(name)

    def rows(self) -> List[List[str]]:
        return [
            [
                self.case,
                item.region,
                format_metric(item.dice),
                format_metric(item.sensitivity),
                format_metric(item.specificity),
                format_metric(item.precision),
                format_metric(item.recall),
                format_metric(item.hd95),
                format_metric(item.asd),
                ";".join(item.flags),
            ]
            for item in self.regions
        ]


# ----------------------------------------------------------------------
# Overlap
# ----------------------------------------------------------------------
def _check_pair(pred: BinaryMask, gt: BinaryMask) -> None:
    if pred.grid.shape != gt.grid.shape:
        raise ShapeError(f"mask shapes differ: {pred.grid.shape} vs {gt.grid.shape}")


def confusion_counts(pred: BinaryMask, gt: BinaryMask) -> Tuple[int, int, int, int]:
    """``(TP, FP, FN, TN)`` voxel counts."""
    _check_pair(pred, gt)
    p, g = pred.grid, gt.grid
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else math.nan


def _dice_from_counts(tp: int, fp: int, fn: int) -> float:
    denominator = 2 * tp + fp + fn
    return 1.0 if denominator == 0 else 2 * tp / denominator


def _sensitivity_from_counts(tp: int, fn: int) -> float:
    return _ratio(tp, tp + fn)


def _specificity_from_counts(fp: int, tn: int) -> float:
    return _ratio(tn, tn + fp)


def _precision_from_counts(tp: int, fp: int) -> float:
    return _ratio(tp, tp + fp)


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """``2TP / (2TP + FP + FN)``; 1.0 when both masks are empty."""
    tp, fp, fn, _ = confusion_counts(pred, gt)
    return _dice_from_counts(tp, fp, fn)


def sensitivity(pred: BinaryMask, gt: BinaryMask) -> float:
    """``TP / (TP + FN)``, also reported as recall; nan when ``gt`` is empty."""
    tp, _, fn, _ = confusion_counts(pred, gt)
    return _sensitivity_from_counts(tp, fn)


recall = sensitivity


def specificity(pred: BinaryMask, gt: BinaryMask) -> float:
    """``TN / (TN + FP)``; nan when every voxel is foreground in ``gt``."""
    _, fp, _, tn = confusion_counts(pred, gt)
    return _specificity_from_counts(fp, tn)


def precision(pred: BinaryMask, gt: BinaryMask) -> float:
    """``TP / (TP + FP)``; nan when ``pred`` is empty."""
    tp, fp, _, _ = confusion_counts(pred, gt)
    return _precision_from_counts(tp, fp)


# ----------------------------------------------------------------------
# Distances
# ----------------------------------------------------------------------
def surface_voxels(mask: BinaryMask) -> np.ndarray:
    """Foreground voxels with a face neighbour that is background or off-grid."""
    structure = ndimage.generate_binary_structure(mask.grid.ndim, 1)
    interior = ndimage.binary_erosion(mask.grid, structure=structure, border_value=0)
    return np.argwhere(mask.grid & ~interior)


def _points(mask: BinaryMask, mode: DistanceMode) -> np.ndarray:
    coords = surface_voxels(mask) if mode is DistanceMode.SURFACE else np.argwhere(mask.grid)
    return coords.astype(np.float64) * np.asarray(mask.spacing)


def directed_distances(
    source: BinaryMask, target: BinaryMask, mode: DistanceMode = DistanceMode.SURFACE
) -> np.ndarray:
    """Distance from every point of ``source`` to the nearest point of ``target``."""
    _check_pair(source, target)
    if source.spacing != target.spacing:
        raise ShapeError(f"spacing differs: {source.spacing} vs {target.spacing}")
    a, b = _points(source, mode), _points(target, mode)
    if a.size == 0 or b.size == 0:
        return np.zeros(0)
    _, nearest = cKDTree(b).query(a, k=1)
    # Recompute from the matched points so values are plain sqrt(sum of squares).
    return np.sqrt(((a - b[nearest]) ** 2).sum(axis=1))


def nearest_rank(values: np.ndarray, percent: int) -> float:
    """The ``ceil(percent/100 * n)``-th smallest value (1-based)."""
    ordered = np.sort(values)
    rank = max(1, -(-percent * ordered.size // 100))
    return float(ordered[rank - 1])


DistancePair = Optional[Tuple[np.ndarray, np.ndarray]]


def _both_directions(pred: BinaryMask, gt: BinaryMask, mode: DistanceMode) -> DistancePair:
    _check_pair(pred, gt)
    if pred.empty or gt.empty:
        return None
    return directed_distances(pred, gt, mode), directed_distances(gt, pred, mode)


def _hd95_from_pair(pair: DistancePair) -> float:
    if pair is None:
        return math.nan
    return max(nearest_rank(pair[0], 95), nearest_rank(pair[1], 95))


def _hausdorff_from_pair(pair: DistancePair) -> float:
    if pair is None:
        return math.nan
    return float(max(pair[0].max(), pair[1].max()))


def _asd_from_pair(pair: DistancePair) -> float:
    if pair is None:
        return math.nan
    return float(np.concatenate(pair).mean())


def hausdorff95(pred: BinaryMask, gt: BinaryMask, mode: DistanceMode = DistanceMode.SURFACE) -> float:
    """Symmetric nearest-rank 95th-percentile surface distance; nan if a mask is empty."""
    return _hd95_from_pair(_both_directions(pred, gt, mode))


def hausdorff(pred: BinaryMask, gt: BinaryMask, mode: DistanceMode = DistanceMode.SURFACE) -> float:
    """Largest directed distance in either direction; nan if a mask is empty."""
    return _hausdorff_from_pair(_both_directions(pred, gt, mode))


def average_surface_distance(
    pred: BinaryMask, gt: BinaryMask, mode: DistanceMode = DistanceMode.SURFACE
) -> float:
    """Mean over both directed distance sets pooled together; nan if a mask is empty."""
    return _asd_from_pair(_both_directions(pred, gt, mode))


# ----------------------------------------------------------------------
# Regions and reports
# ----------------------------------------------------------------------
def compose_region(
    label_map: np.ndarray, spec: RegionSpec, spacing: Sequence[float] = ()
) -> BinaryMask:
    """Voxels whose label is one of ``spec.labels``."""
    grid = np.isin(np.asarray(label_map), sorted(spec.labels))
    return BinaryMask(grid=grid, spacing=tuple(spacing))


def region_metrics(
    pred: BinaryMask, gt: BinaryMask, name: str, mode: DistanceMode = DistanceMode.SURFACE
) -> RegionMetrics:
    """Every metric for one region pair, with flags for the undefined ones.

    Flags come in a fixed order: ``dice_both_empty``, the three
    ``*_undefined`` ratios, then ``distance_undefined``.
    """
    tp, fp, fn, tn = confusion_counts(pred, gt)
    flags: List[str] = []
    if 2 * tp + fp + fn == 0:
        flags.append("dice_both_empty")
    sens = _sensitivity_from_counts(tp, fn)
    spec = _specificity_from_counts(fp, tn)
    prec = _precision_from_counts(tp, fp)
    for label, value in (("sensitivity", sens), ("specificity", spec), ("precision", prec)):
        if math.isnan(value):
            flags.append(f"{label}_undefined")
    pair = _both_directions(pred, gt, mode)
    if pair is None:
        flags.append("distance_undefined")
    return RegionMetrics(
        region=name,
        dice=_dice_from_counts(tp, fp, fn),
        sensitivity=sens,
        specificity=spec,
        precision=prec,
        recall=sens,
        hd95=_hd95_from_pair(pair),
        hausdorff=_hausdorff_from_pair(pair),
        asd=_asd_from_pair(pair),
        flags=flags,
    )


def evaluate(
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    specs: Sequence[RegionSpec],
    spacing: Sequence[float] = (),
    case: str = "case",
    mode: DistanceMode = DistanceMode.SURFACE,
) -> MetricsReport:
    """All metrics for every region, in the order ``specs`` lists them."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ShapeError(f"label map shapes differ: {pred_labels.shape} vs {gt_labels.shape}")
    regions = [
        region_metrics(
            compose_region(pred_labels, spec, spacing),
            compose_region(gt_labels, spec, spacing),
            spec.name,
            mode,
        )
        for spec in specs
    ]
    return MetricsReport(case=case, regions=regions)


def label_regions(label_values: Iterable[int]) -> List[RegionSpec]:
    """One region per foreground label value, named ``label_<v>``."""
    return [RegionSpec(f"label_{v}", frozenset({int(v)})) for v in sorted(set(label_values)) if v != 0]


def regions_from_json(data: object) -> List[RegionSpec]:
    """Parse ``[{"name": ..., "labels": [...]}, ...]``; unknown keys are rejected.

    A ``{"regions": [...]}`` wrapper object is accepted too.
    """
    if isinstance(data, dict) and set(data) == {"regions"}:
        data = data["regions"]
    if not isinstance(data, list):
        raise ConfigError("region specs must be a list of objects")
    specs = []
    for entry in data:
        if not isinstance(entry, dict):
            raise ConfigError("each region spec must be an object")
        unknown = set(entry) - {"name", "labels"}
        if unknown:
            raise ConfigError(f"unknown region spec keys: {sorted(unknown)}")
        if "name" not in entry or "labels" not in entry:
            raise ConfigError("region specs need 'name' and 'labels'")
        specs.append(RegionSpec(str(entry["name"]), frozenset(entry["labels"])))
    return specs


def load_region_specs(path: Union[str, Path]) -> List[RegionSpec]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    return regions_from_json(data)


# ----------------------------------------------------------------------
# Aggregation and CSV output
# ----------------------------------------------------------------------
@dataclass
class SummaryRow:
    region: str
    metric: str
    mean: float
    std: float
    count: int


def summarize(reports: Sequence[MetricsReport]) -> List[SummaryRow]:
    """Mean and population std per (region, metric), ignoring undefined cells."""
    order: List[str] = []
    values: Dict[Tuple[str, str], List[float]] = {}
    for report in reports:
        for item in report.regions:
            if item.region not in order:
                order.append(item.region)
            for metric in SUMMARY_METRICS:
                values.setdefault((item.region, metric), []).append(getattr(item, metric))
    rows = []
    for region in order:
        for metric in SUMMARY_METRICS:
            defined = [v for v in values[(region, metric)] if not math.isnan(v)]
            if defined:
                rows.append(SummaryRow(region, metric, float(np.mean(defined)), float(np.std(defined)), len(defined)))
            else:
                rows.append(SummaryRow(region, metric, math.nan, math.nan, 0))
    return rows


def summary_lines(rows: Sequence[SummaryRow]) -> List[str]:
    """One ``region metric mean±std (n=...)`` line per summary row, for the terminal."""
    return [
        f"{row.region:<12} {row.metric:<12} {format_mean_std(row.mean, row.std)} (n={row.count})"
        for row in rows
    ]


def write_metrics_csv(path: Union[str, Path], reports: Sequence[MetricsReport]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for report in reports:
            writer.writerows(report.rows())
    logger.info("wrote %d case(s) to %s", len(reports), path)


def write_summary_csv(path: Union[str, Path], rows: Sequence[SummaryRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("region", "metric", "mean", "std", "n"))
        for row in rows:
            writer.writerow((row.region, row.metric, format_metric(row.mean), format_metric(row.std), row.count))


__all__ = [
    "CSV_HEADER",
    "HEADLINE_COLUMNS",
    "BRATS_REGIONS",
    "BinaryMask",
    "RegionSpec",
    "RegionMetrics",
    "MetricsReport",
    "SummaryRow",
    "confusion_counts",
    "dice",
    "sensitivity",
    "specificity",
    "precision",
    "recall",
    "surface_voxels",
    "directed_distances",
    "nearest_rank",
    "hausdorff95",
    "hausdorff",
    "average_surface_distance",
    "compose_region",
    "region_metrics",
    "evaluate",
    "label_regions",
    "regions_from_json",
    "load_region_specs",
    "summarize",
    "summary_lines",
    "write_metrics_csv",
    "write_summary_csv",
]
