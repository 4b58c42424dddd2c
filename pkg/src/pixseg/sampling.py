"""Training pixel selection: uniform baseline and class-balanced sampling.

The class-balanced sampler gives every class present in a slice the same
share ``floor(N / K)`` of the pixel budget, hands the remainder out one pixel
at a time to the lowest labels, and resamples scarce classes with replacement
so that the per-class counts stay equal even on heavily skewed slices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from pixseg.errors import ConfigError, SamplingError, ShapeError
from pixseg.modes import DeficitPolicy, SamplerStrategy
from pixseg.optim import MAX_SEED

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplePlan:
    n_total: int
    strategy: SamplerStrategy = SamplerStrategy.CLASS_BALANCED
    seed: int = 0
    ignore_label: Optional[int] = None
    deficit_policy: DeficitPolicy = DeficitPolicy.REPLACE

    def __post_init__(self) -> None:
        if self.n_total <= 0:
            raise ConfigError(f"n_total must be positive, got {self.n_total}")
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def with_seed(self, seed: int) -> "SamplePlan":
        return SamplePlan(
            n_total=self.n_total,
            strategy=self.strategy,
            seed=seed,
            ignore_label=self.ignore_label,
            deficit_policy=self.deficit_policy,
        )


@dataclass
class PixelBatch:
    """Sampled pixel coordinates ``[N, 2]`` and their labels ``[N]``."""

    coords: np.ndarray
    labels: np.ndarray
    per_class_counts: Dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    @classmethod
    def from_flat(cls, flat_index: np.ndarray, mask: np.ndarray) -> "PixelBatch":
        flat_index = np.asarray(flat_index, dtype=np.int64)
        rows, cols = np.unravel_index(flat_index, mask.shape)
        coords = np.stack([rows, cols], axis=1).astype(np.int64)
        labels = mask.reshape(-1)[flat_index].astype(np.int64)
        present, counts = np.unique(labels, return_counts=True)
        return cls(
            coords=coords,
            labels=labels,
            per_class_counts={int(c): int(n) for c, n in zip(present, counts)},
        )


def derive_seed(seed: int, index: int) -> int:
    """Per-image seed: ``seed XOR index`` within 64 bits."""
    return (int(seed) ^ int(index)) & MAX_SEED


def _eligible(mask: np.ndarray, ignore_label: Optional[int], valid: Optional[np.ndarray]) -> np.ndarray:
    if mask.ndim != 2:
        raise ShapeError(f"label mask must be 2-D, got rank {mask.ndim}")
    eligible = np.ones(mask.shape, dtype=bool)
    if valid is not None:
        if valid.shape != mask.shape:
            raise ShapeError(f"validity mask shape {valid.shape} != label mask shape {mask.shape}")
        eligible &= valid.astype(bool)
    if ignore_label is not None:
        eligible &= mask != ignore_label
    return eligible


def class_presence(
    mask: np.ndarray,
    ignore_label: Optional[int] = None,
    valid: Optional[np.ndarray] = None,
) -> List[Tuple[int, int]]:
    """Ascending ``(label, pixel count)`` pairs over eligible pixels."""
    mask = np.asarray(mask)
    eligible = _eligible(mask, ignore_label, valid)
    labels, counts = np.unique(mask[eligible], return_counts=True)
    return [(int(label), int(count)) for label, count in zip(labels, counts)]


def sample_uniform(mask: np.ndarray, plan: SamplePlan, valid: Optional[np.ndarray] = None) -> PixelBatch:
    """Draw ``N`` eligible pixels uniformly; with replacement only if fewer than ``N`` exist."""
    mask = np.asarray(mask)
    candidates = np.flatnonzero(_eligible(mask, plan.ignore_label, valid))
    if candidates.size == 0:
        raise SamplingError("mask has no eligible pixels to sample")
    rng = np.random.default_rng(plan.seed)
    replace = candidates.size < plan.n_total
    chosen = rng.choice(candidates, size=plan.n_total, replace=replace)
    return PixelBatch.from_flat(chosen, mask)


def class_quotas(classes: List[int], n_total: int) -> Dict[int, int]:
    """``floor(N/K)`` each, plus one extra for the first ``N mod K`` labels."""
    n_classes = len(classes)
    if n_classes == 0:
        raise SamplingError("no classes present")
    if n_total < n_classes:
        raise SamplingError(
            f"pixel budget {n_total} is smaller than the {n_classes} classes present"
        )
    quota, remainder = divmod(n_total, n_classes)
    return {label: quota + (1 if rank < remainder else 0) for rank, label in enumerate(sorted(classes))}


def sample_class_balanced(
    mask: np.ndarray, plan: SamplePlan, valid: Optional[np.ndarray] = None
) -> PixelBatch:
    """Equal per-class pixel counts for the classes present in ``mask``."""
    mask = np.asarray(mask)
    eligible = _eligible(mask, plan.ignore_label, valid)
    flat_mask = mask.reshape(-1)
    flat_eligible = np.flatnonzero(eligible)
    if flat_eligible.size == 0:
        raise SamplingError("mask has no eligible pixels to sample")
    present = [label for label, _ in class_presence(mask, plan.ignore_label, valid)]
    quotas = class_quotas(present, plan.n_total)
    rng = np.random.default_rng(plan.seed)

    chosen: List[np.ndarray] = []
    deficit = 0
    for label in present:
        members = flat_eligible[flat_mask[flat_eligible] == label]
        quota = quotas[label]
        if members.size >= quota:
            chosen.append(rng.choice(members, size=quota, replace=False))
        elif plan.deficit_policy is DeficitPolicy.REPLACE:
            chosen.append(rng.choice(members, size=quota, replace=True))
        else:
            chosen.append(rng.permutation(members))
            deficit += quota - members.size

    if deficit:
        used = np.concatenate(chosen)
        pool = np.setdiff1d(flat_eligible, used, assume_unique=False)
        if pool.size == 0:
            pool = flat_eligible
        logger.debug("filling a deficit of %d pixels from %d spare pixels", deficit, pool.size)
        chosen.append(rng.choice(pool, size=deficit, replace=pool.size < deficit))

    return PixelBatch.from_flat(np.concatenate(chosen), mask)


def sample_pixels(mask: np.ndarray, plan: SamplePlan, valid: Optional[np.ndarray] = None) -> PixelBatch:
    if plan.strategy is SamplerStrategy.UNIFORM:
        return sample_uniform(mask, plan, valid)
    return sample_class_balanced(mask, plan, valid)


__all__ = [
    "SamplePlan",
    "PixelBatch",
    "derive_seed",
    "class_presence",
    "class_quotas",
    "sample_uniform",
    "sample_class_balanced",
    "sample_pixels",
]
