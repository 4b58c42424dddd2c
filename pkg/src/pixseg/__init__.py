"""Public interface for the pixseg segmentation engine."""

__version__ = "0.1.0"

from pixseg.checkpoint import load_checkpoint, save_checkpoint
from pixseg.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NormalizationError,
    NumericError,
    PixsegError,
    SamplingError,
    ShapeError,
    VolumeFormatError,
)
from pixseg.metrics import BRATS_REGIONS, BinaryMask, MetricsReport, RegionSpec, evaluate
from pixseg.model import ModelConfig, PixelNet
from pixseg.modes import DeficitPolicy, DistanceMode, SamplerStrategy
from pixseg.sampling import PixelBatch, SamplePlan, sample_pixels
from pixseg.segmenter import DensePrediction, Segmenter, predict_dense
from pixseg.synth import SynthConfig, generate_synthetic
from pixseg.tensor import Tensor, no_grad
from pixseg.volume import LabeledSlice, VolumeFile, load_volume, normalize, save_volume

__all__ = [
    "__version__",
    "BRATS_REGIONS",
    "BinaryMask",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DeficitPolicy",
    "DensePrediction",
    "DistanceMode",
    "LabeledSlice",
    "MetricsReport",
    "ModelConfig",
    "NormalizationError",
    "NumericError",
    "PixelBatch",
    "PixelNet",
    "PixsegError",
    "RegionSpec",
    "SamplePlan",
    "SamplerStrategy",
    "SamplingError",
    "Segmenter",
    "ShapeError",
    "SynthConfig",
    "Tensor",
    "VolumeFile",
    "VolumeFormatError",
    "evaluate",
    "generate_synthetic",
    "load_checkpoint",
    "load_volume",
    "no_grad",
    "normalize",
    "predict_dense",
    "sample_pixels",
    "save_checkpoint",
    "save_volume",
]
