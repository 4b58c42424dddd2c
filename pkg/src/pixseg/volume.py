"""On-disk multi-modal volumes, per-channel normalization and training slices.

``.pxvol`` layout (all integers little-endian)::

    b"PXVOL1\\0"                      magic
    u32 C, u32 D, u32 H, u32 W       dims
    f32[C*D*H*W]                     image, C-major
    u8[D*H*W]                        labels
    u8[D*H*W]                        validity (0 or 1)

The reader checks the magic, that the payload length matches the dims
exactly and that validity bytes are 0/1.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np

from pixseg.errors import ConfigError, DataError, NormalizationError, ShapeError, VolumeFormatError

logger = logging.getLogger(__name__)

VOLUME_MAGIC = b"PXVOL1\0"
VOLUME_SUFFIX = ".pxvol"
_DIMS = struct.Struct("<4I")


@dataclass
class VolumeFile:
    image: np.ndarray
    labels: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool)
        if self.image.ndim != 4:
            raise ShapeError(f"volume image must be [C,D,H,W], got rank {self.image.ndim}")
        if self.labels.shape != self.image.shape[1:]:
            raise ShapeError(f"label shape {self.labels.shape} != image spatial shape {self.image.shape[1:]}")
        if self.valid.shape != self.labels.shape:
            raise ShapeError(f"validity shape {self.valid.shape} != label shape {self.labels.shape}")

    @property
    def dims(self) -> tuple:
        return tuple(int(d) for d in self.image.shape)

    @property
    def depth(self) -> int:
        return self.image.shape[1]


@dataclass
class LabeledSlice:
    """One axial slice: normalized ``[C,H,W]`` image, class-index mask, validity."""

    image: np.ndarray
    mask: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.int64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.image.ndim != 3:
            raise ShapeError(f"slice image must be [C,H,W], got rank {self.image.ndim}")
        if self.mask.shape != self.image.shape[1:]:
            raise ShapeError(f"mask shape {self.mask.shape} != image spatial shape {self.image.shape[1:]}")
        if self.valid.shape != self.mask.shape:
            raise ShapeError(f"validity shape {self.valid.shape} != mask shape {self.mask.shape}")

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]

    def check_classes(self, n_classes: int) -> None:
        if self.mask.size and (self.mask.min() < 0 or self.mask.max() >= n_classes):
            raise DataError(f"mask values must lie in [0, {n_classes}), got max {self.mask.max()}")


def save_volume(path: Union[str, Path], volume: VolumeFile) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(VOLUME_MAGIC)
        handle.write(_DIMS.pack(*volume.dims))
        handle.write(volume.image.astype("<f4").tobytes())
        handle.write(volume.labels.tobytes())
        handle.write(volume.valid.astype(np.uint8).tobytes())
    logger.debug("wrote volume %s dims=%s", path, volume.dims)


def load_volume(path: Union[str, Path]) -> VolumeFile:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise VolumeFormatError(f"cannot read volume {path}: {err}") from err
    return parse_volume(raw, source=str(path))


def parse_volume(raw: bytes, source: str = "<bytes>") -> VolumeFile:
    if not raw.startswith(VOLUME_MAGIC):
        raise VolumeFormatError(f"{source}: not a PXVOL1 file (bad magic)")
    offset = len(VOLUME_MAGIC)
    if len(raw) < offset + _DIMS.size:
        raise VolumeFormatError(f"{source}: truncated header")
    channels, depth, height, width = _DIMS.unpack_from(raw, offset)
    offset += _DIMS.size
    voxels = depth * height * width
    expected = channels * voxels * 4 + 2 * voxels
    if len(raw) - offset != expected:
        raise VolumeFormatError(
            f"{source}: payload is {len(raw) - offset} bytes, dims "
            f"{channels}x{depth}x{height}x{width} require {expected}"
        )
    image = np.frombuffer(raw, dtype="<f4", count=channels * voxels, offset=offset)
    offset += channels * voxels * 4
    labels = np.frombuffer(raw, dtype=np.uint8, count=voxels, offset=offset)
    offset += voxels
    valid = np.frombuffer(raw, dtype=np.uint8, count=voxels, offset=offset)
    if np.any(valid > 1):
        raise VolumeFormatError(f"{source}: validity payload must contain only 0/1")
    return VolumeFile(
        image=image.reshape(channels, depth, height, width).astype(np.float32),
        labels=labels.reshape(depth, height, width).copy(),
        valid=valid.reshape(depth, height, width).astype(bool),
    )


def list_volumes(directory: Union[str, Path]) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(directory.glob(f"*{VOLUME_SUFFIX}"))


def normalize(image: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Per-channel z-score over valid voxels; invalid voxels become 0."""
    image = np.asarray(image, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if image.shape[1:] != valid.shape:
        raise ShapeError(f"validity shape {valid.shape} != image spatial shape {image.shape[1:]}")
    if int(valid.sum()) < 2:
        raise NormalizationError(f"need at least 2 valid voxels per channel, got {int(valid.sum())}")
    out = np.zeros_like(image)
    for channel in range(image.shape[0]):
        values = image[channel][valid]
        mean = values.mean()
        std = np.sqrt(np.mean((values - mean) ** 2))
        if not std > 0:
            raise NormalizationError(f"channel {channel} has zero variance over valid voxels")
        out[channel][valid] = (values - mean) / std
    return out


def select_modalities(volume: VolumeFile, channels: Optional[Sequence[int]]) -> VolumeFile:
    """Keep (and reorder) the listed image channels."""
    if channels is None:
        return volume
    available = volume.image.shape[0]
    for channel in channels:
        if not 0 <= channel < available:
            raise ConfigError(f"channel {channel} not in a {available}-channel volume")
    return VolumeFile(image=volume.image[list(channels)], labels=volume.labels, valid=volume.valid)


def labels_to_classes(labels: np.ndarray, label_values: Sequence[int]) -> np.ndarray:
    """Map stored label values to contiguous class indices."""
    lookup = np.full(256, -1, dtype=np.int64)
    for index, value in enumerate(label_values):
        lookup[int(value)] = index
    mapped = lookup[np.asarray(labels, dtype=np.uint8)]
    if np.any(mapped < 0):
        unknown = sorted(set(np.unique(np.asarray(labels)[mapped < 0]).tolist()))
        raise DataError(f"label values {unknown} are not in label_values {list(label_values)}")
    return mapped


def classes_to_labels(classes: np.ndarray, label_values: Sequence[int]) -> np.ndarray:
    return np.asarray(label_values, dtype=np.uint8)[np.asarray(classes, dtype=np.int64)]


def pad_slice(item: LabeledSlice, height: int, width: int) -> LabeledSlice:
    """Zero-pad a slice (centered) to ``height x width``; padding is invalid background."""
    if height < item.height or width < item.width:
        raise ShapeError(
            f"cannot pad a {item.height}x{item.width} slice down to {height}x{width}"
        )
    top = (height - item.height) // 2
    left = (width - item.width) // 2
    pad = ((top, height - item.height - top), (left, width - item.width - left))
    return LabeledSlice(
        image=np.pad(item.image, ((0, 0),) + pad),
        mask=np.pad(item.mask, pad),
        valid=np.pad(item.valid, pad),
    )


def volume_slices(
    volume: VolumeFile,
    label_values: Optional[Sequence[int]] = None,
    normalize_channels: bool = True,
) -> Iterator[LabeledSlice]:
    """Yield axial slices with class-index masks.

    Slices whose valid region cannot be normalized (fewer than two valid
    voxels, or a flat channel) are skipped with a warning.
    """
    if label_values is None:
        label_values = list(range(int(volume.labels.max()) + 1))
    for depth in range(volume.depth):
        image = volume.image[:, depth].astype(np.float64)
        valid = volume.valid[depth]
        if normalize_channels:
            try:
                image = normalize(image, valid)
            except NormalizationError as err:
                logger.warning("skipping slice %d: %s", depth, err)
                continue
        yield LabeledSlice(
            image=image,
            mask=labels_to_classes(volume.labels[depth], label_values),
            valid=valid,
        )


__all__ = [
    "VOLUME_MAGIC",
    "VOLUME_SUFFIX",
    "VolumeFile",
    "LabeledSlice",
    "save_volume",
    "load_volume",
    "parse_volume",
    "list_volumes",
    "normalize",
    "select_modalities",
    "labels_to_classes",
    "classes_to_labels",
    "pad_slice",
    "volume_slices",
]
