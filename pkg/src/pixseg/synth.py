"""Seeded synthetic multi-modal volumes with controllable class skew.

Every foreground class is a smooth blob field (a sum of seeded Gaussian bumps)
thresholded by rank, so each volume holds exactly
``round(fraction * valid_voxels)`` voxels of that class.  In nested mode a
single field is shared and classes occupy concentric shells of it, the
innermost being the last class, like tumor sub-regions.

Each modality renders a class-dependent mean intensity plus Gaussian noise,
optionally multiplied by a smooth bias field normalized to mean 1.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from pixseg.config import read_structured, reject_unknown_keys
from pixseg.errors import ConfigError
from pixseg.optim import MAX_SEED
from pixseg.sampling import derive_seed
from pixseg.volume import VOLUME_SUFFIX, VolumeFile, save_volume

logger = logging.getLogger(__name__)

SYNTH_CONFIG_NAME = "synth.json"


@dataclass(frozen=True)
class SynthConfig:
    n_volumes: int = 4
    slices_per_volume: int = 8
    height: int = 64
    width: int = 64
    n_classes: int = 4
    # Foreground classes 1..n_classes-1; the remainder is background.
    class_fractions: Tuple[float, ...] = (0.05, 0.03, 0.02)
    modality_count: int = 3
    noise_sigma: float = 0.2
    bias_field: bool = False
    nested: bool = False
    bumps_per_class: int = 3
    # Invalid rim (in voxels) around every slice, labelled background.
    border: int = 0
    label_values: Optional[Tuple[int, ...]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_fractions", tuple(float(f) for f in self.class_fractions))
        if self.label_values is not None:
            object.__setattr__(self, "label_values", tuple(int(v) for v in self.label_values))
        self.validate()

    def validate(self) -> None:
        for name in ("n_volumes", "slices_per_volume", "height", "width", "n_classes", "modality_count", "bumps_per_class"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.class_fractions) != self.n_classes - 1:
            raise ConfigError(
                f"class_fractions needs {self.n_classes - 1} entries (one per foreground class), "
                f"got {len(self.class_fractions)}"
            )
        if any(f < 0 for f in self.class_fractions):
            raise ConfigError(f"class_fractions must be nonnegative, got {list(self.class_fractions)}")
        if sum(self.class_fractions) > 1.0:
            raise ConfigError(
                f"class_fractions sum to {sum(self.class_fractions):.4f}; at most 1 is reachable"
            )
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.border < 0 or 2 * self.border >= min(self.height, self.width):
            raise ConfigError(f"border {self.border} leaves no valid voxels")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.label_values is not None and (
            len(self.label_values) != self.n_classes
            or len(set(self.label_values)) != self.n_classes
            or not all(0 <= v <= 255 for v in self.label_values)
        ):
            raise ConfigError("label_values must list one distinct 0..255 value per class")

    def stored_label_values(self) -> Tuple[int, ...]:
        return self.label_values if self.label_values is not None else tuple(range(self.n_classes))


DEFAULT_SYNTH_CONFIG: Dict[str, Any] = {
    f.name: (list(f.default) if isinstance(f.default, tuple) else f.default)
    for f in fields(SynthConfig)
}


def synth_config_from_dict(user: Dict[str, Any]) -> SynthConfig:
    reject_unknown_keys(user, DEFAULT_SYNTH_CONFIG)
    try:
        return SynthConfig(**user)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"invalid synth config: {err}") from err


def load_synth_config(path: Optional[Union[str, Path]]) -> SynthConfig:
    if path is None:
        return SynthConfig()
    return synth_config_from_dict(read_structured(path))


def synth_config_to_dict(config: SynthConfig) -> Dict[str, Any]:
    raw = asdict(config)
    raw["class_fractions"] = list(config.class_fractions)
    raw["label_values"] = list(config.label_values) if config.label_values is not None else None
    return raw


# ----------------------------------------------------------------------
# Fields
# ----------------------------------------------------------------------
def _grid(shape: Tuple[int, int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")


def gaussian_bumps(
    shape: Tuple[int, int, int], n_bumps: int, sigma_fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Sum of ``n_bumps`` isotropic-in-slice Gaussians with seeded centers and amplitudes."""
    zz, yy, xx = _grid(shape)
    depth, height, width = shape
    field_ = np.zeros(shape)
    for _ in range(n_bumps):
        center = rng.uniform(0, 1, size=3) * np.array([depth - 1, height - 1, width - 1], dtype=np.float64)
        sigma = sigma_fraction * min(height, width) * rng.uniform(0.75, 1.25)
        sigma_z = max(sigma * depth / max(height, width), 1.0)
        amplitude = rng.uniform(0.5, 1.5)
        field_ += amplitude * np.exp(
            -((zz - center[0]) ** 2) / (2 * sigma_z**2)
            - ((yy - center[1]) ** 2 + (xx - center[2]) ** 2) / (2 * sigma**2)
        )
    return field_


def _top_ranked(field_: np.ndarray, candidates: np.ndarray, count: int) -> np.ndarray:
    """Flat indices of the ``count`` candidates with the largest field values."""
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    values = field_.reshape(-1)[candidates]
    order = np.argsort(-values, kind="stable")
    return candidates[order[:count]]


def synth_classes(config: SynthConfig, valid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Class-index volume ``[D,H,W]`` with exact per-class voxel counts."""
    shape = valid.shape
    classes = np.zeros(shape, dtype=np.int64)
    flat = classes.reshape(-1)
    n_valid = int(valid.sum())
    counts = [int(round(f * n_valid)) for f in config.class_fractions]
    if sum(counts) > n_valid:
        counts[-1] -= sum(counts) - n_valid

    if config.nested:
        field_ = gaussian_bumps(shape, config.bumps_per_class, 0.2, rng)
        ranked = _top_ranked(field_, np.flatnonzero(valid), sum(counts))
        start = 0
        # Innermost shell (highest field) is the last class.
        for label in range(config.n_classes - 1, 0, -1):
            count = counts[label - 1]
            flat[ranked[start:start + count]] = label
            start += count
        return classes

    for label in range(1, config.n_classes):
        field_ = gaussian_bumps(shape, config.bumps_per_class, 0.12, rng)
        free = np.flatnonzero(valid.reshape(-1) & (flat == 0))
        flat[_top_ranked(field_, free, counts[label - 1])] = label
    return classes


def class_means(n_classes: int, modality_count: int) -> np.ndarray:
    """``[M, K]`` mean intensities; each modality orders the classes differently."""
    means = np.zeros((modality_count, n_classes))
    scale = max(n_classes - 1, 1)
    for modality in range(modality_count):
        for label in range(n_classes):
            means[modality, label] = 0.5 + 2.0 * ((label * (2 * modality + 1)) % n_classes) / scale
    return means


def bias_gain(shape: Tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    """Smooth multiplicative gain: 2 to 4 wide Gaussians, normalized to mean 1."""
    n_bumps = int(rng.integers(2, 5))
    gain = 1.0 + gaussian_bumps(shape, n_bumps, 0.6, rng)
    return gain / gain.mean()


def synth_volume(config: SynthConfig, index: int) -> VolumeFile:
    rng = np.random.default_rng(derive_seed(config.seed, index))
    shape = (config.slices_per_volume, config.height, config.width)
    valid = np.zeros(shape, dtype=bool)
    b = config.border
    valid[:, b:config.height - b, b:config.width - b] = True

    classes = synth_classes(config, valid, rng)
    means = class_means(config.n_classes, config.modality_count)
    image = means[:, classes] + config.noise_sigma * rng.standard_normal((config.modality_count,) + shape)
    if config.bias_field:
        image = image * bias_gain(shape, rng)[None]
    image[:, ~valid] = 0.0

    labels = np.asarray(config.stored_label_values(), dtype=np.uint8)[classes]
    return VolumeFile(image=image.astype(np.float32), labels=labels, valid=valid)


def volume_name(index: int) -> str:
    return f"volume_{index:03d}{VOLUME_SUFFIX}"


def generate_synthetic(
    config: SynthConfig, out_dir: Union[str, Path], workers: int = 1
) -> List[Path]:
    """Write ``config.n_volumes`` volumes plus the config itself to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def write_one(index: int) -> Path:
        path = out_dir / volume_name(index)
        save_volume(path, synth_volume(config, index))
        logger.info("wrote %s", path)
        return path

    indices = range(config.n_volumes)
    if workers > 1 and config.n_volumes > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(write_one, indices))
    else:
        paths = [write_one(index) for index in indices]

    (out_dir / SYNTH_CONFIG_NAME).write_text(
        json.dumps(synth_config_to_dict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return paths


__all__ = [
    "SynthConfig",
    "DEFAULT_SYNTH_CONFIG",
    "SYNTH_CONFIG_NAME",
    "synth_config_from_dict",
    "synth_config_to_dict",
    "load_synth_config",
    "gaussian_bumps",
    "synth_classes",
    "class_means",
    "bias_gain",
    "synth_volume",
    "volume_name",
    "generate_synthetic",
]
