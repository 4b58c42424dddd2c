"""The pixel segmentation network: convolutional backbone, hypercolumn taps and
an MLP pixel predictor.

The backbone is a stack of stages, each ``n_convs`` 3x3 conv + ReLU pairs
followed by a 2x2 max pool.  The output of the last conv of a tapped stage
(before its pool) becomes one pyramid level with stride ``2**stage``.  The
MLP maps each hypercolumn to ``n_classes`` logits: ``f(p) = g(h_p)``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from pixseg.errors import ConfigError, ShapeError
from pixseg.hypercolumn import FeatureLevel, FeaturePyramid
from pixseg.layers import LayerSpec, apply_layer, he_uniform
from pixseg.modes import DeficitPolicy, LayerKind, SamplerStrategy
from pixseg.optim import SgdConfig
from pixseg.tensor import Tensor

Stage = Tuple[int, int]


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    stages: Tuple[Stage, ...] = ((2, 16), (2, 32), (2, 64))
    tap_stages: Tuple[int, ...] = (0, 1, 2)
    mlp_widths: Tuple[int, ...] = (64, 64)
    n_classes: int = 4
    n_sample_pixels: int = 256
    sampler: SamplerStrategy = SamplerStrategy.CLASS_BALANCED
    deficit_policy: DeficitPolicy = DeficitPolicy.REPLACE
    ignore_label: Optional[int] = None
    sgd: SgdConfig = field(default_factory=SgdConfig)
    iterations: int = 2000
    tile_height: int = 16
    # Scale applied to the He-uniform draw of the final classifier layer so an
    # untrained model predicts near-uniform class probabilities.
    head_init_scale: float = 0.01
    channels: Optional[Tuple[int, ...]] = None
    label_values: Optional[Tuple[int, ...]] = None
    log_every: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple((int(n), int(w)) for n, w in self.stages))
        object.__setattr__(self, "tap_stages", tuple(int(s) for s in self.tap_stages))
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.label_values is not None:
            object.__setattr__(self, "label_values", tuple(int(v) for v in self.label_values))
        self.validate()

    def validate(self) -> None:
        if self.in_channels <= 0:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        if not self.stages:
            raise ConfigError("the backbone needs at least one stage")
        for index, (n_convs, width) in enumerate(self.stages):
            if n_convs <= 0 or width <= 0:
                raise ConfigError(f"stage {index}: n_convs and width must be positive")
        if not self.tap_stages:
            raise ConfigError("tap_stages must name at least one stage")
        if list(self.tap_stages) != sorted(set(self.tap_stages)):
            raise ConfigError(f"tap_stages must be strictly increasing, got {list(self.tap_stages)}")
        for stage in self.tap_stages:
            if not 0 <= stage < len(self.stages):
                raise ConfigError(f"tap stage {stage} outside 0..{len(self.stages) - 1}")
        if any(w <= 0 for w in self.mlp_widths):
            raise ConfigError("mlp_widths must be positive")
        if self.n_classes <= 0:
            raise ConfigError(f"n_classes must be positive, got {self.n_classes}")
        if self.n_sample_pixels <= 0:
            raise ConfigError("n_sample_pixels must be positive")
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if self.tile_height <= 0:
            raise ConfigError("tile_height must be positive")
        if self.head_init_scale <= 0:
            raise ConfigError("head_init_scale must be positive")
        if self.channels is not None and len(self.channels) != self.in_channels:
            raise ConfigError(
                f"channels lists {len(self.channels)} modalities but in_channels={self.in_channels}"
            )
        if self.label_values is not None:
            if len(self.label_values) != self.n_classes:
                raise ConfigError(
                    f"label_values has {len(self.label_values)} entries for {self.n_classes} classes"
                )
            if len(set(self.label_values)) != len(self.label_values) or not all(
                0 <= v <= 255 for v in self.label_values
            ):
                raise ConfigError("label_values must be distinct values in 0..255")

    @property
    def hypercolumn_width(self) -> int:
        return sum(self.stages[s][1] for s in self.tap_stages)

    @property
    def active_stages(self) -> int:
        """Stages that must run to reach the deepest tap."""
        return max(self.tap_stages) + 1

    @property
    def pool_stages(self) -> int:
        return len(self.stages)

    @property
    def min_input_size(self) -> int:
        return 2 ** self.pool_stages

    def stored_label_values(self) -> Tuple[int, ...]:
        return self.label_values if self.label_values is not None else tuple(range(self.n_classes))


def backbone_specs(config: ModelConfig) -> List[Tuple[str, LayerSpec]]:
    """Named layer specs for the whole backbone, pools included."""
    specs: List[Tuple[str, LayerSpec]] = []
    channels = config.in_channels
    for stage, (n_convs, width) in enumerate(config.stages):
        for conv in range(n_convs):
            prefix = f"backbone.s{stage}.conv{conv}"
            specs.append((prefix, LayerSpec(LayerKind.CONV2D, channels, width)))
            specs.append((f"{prefix}.relu", LayerSpec(LayerKind.RELU)))
            channels = width
        specs.append((f"backbone.s{stage}.pool", LayerSpec(LayerKind.MAXPOOL2X2)))
    return specs


def head_specs(config: ModelConfig) -> List[Tuple[str, LayerSpec]]:
    specs: List[Tuple[str, LayerSpec]] = []
    features = config.hypercolumn_width
    for index, width in enumerate(config.mlp_widths):
        specs.append((f"head.fc{index}", LayerSpec(LayerKind.LINEAR, features, width)))
        specs.append((f"head.fc{index}.relu", LayerSpec(LayerKind.RELU)))
        specs.append((f"head.fc{index}.dropout", LayerSpec(LayerKind.DROPOUT_OFF)))
        features = width
    specs.append(("head.classifier", LayerSpec(LayerKind.LINEAR, features, config.n_classes)))
    return specs


class PixelNet:
    """Backbone + hypercolumn + MLP with named float64 parameters."""

    def __init__(self, config: ModelConfig) -> None:
        self.config = config
        self.backbone = backbone_specs(config)
        self._stage_of_layer = [
            stage for stage, (n_convs, _) in enumerate(config.stages) for _ in range(2 * n_convs + 1)
        ]
        self.head = head_specs(config)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        rng = np.random.default_rng(config.sgd.seed)
        classifier = self.head[-1][0]
        for name, spec in self.backbone + self.head:
            shape = spec.weight_shape()
            if shape is None:
                continue
            weight = he_uniform(shape, spec.fan_in, rng)
            if name == classifier:
                weight = weight * config.head_init_scale
            self.params[f"{name}.weight"] = Tensor(weight, requires_grad=True)
            self.params[f"{name}.bias"] = Tensor(np.zeros(spec.out_features), requires_grad=True)

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------
    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise ShapeError(
                f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, array in state.items():
            if tuple(array.shape) != self.params[name].shape:
                raise ShapeError(
                    f"parameter {name}: shape {tuple(array.shape)} != {self.params[name].shape}"
                )
            self.params[name].data = np.array(array, dtype=np.float64)

    def _layer_params(self, name: str) -> Tuple[Optional[Tensor], Optional[Tensor]]:
        return self.params.get(f"{name}.weight"), self.params.get(f"{name}.bias")

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------
    def features(self, image: Tensor) -> FeaturePyramid:
        """Run the backbone up to the deepest tap and collect the pyramid."""
        config = self.config
        if image.ndim != 3 or image.shape[0] != config.in_channels:
            raise ShapeError(
                f"image must be [{config.in_channels},H,W], got {image.shape}"
            )
        _, height, width = image.shape
        if min(height, width) < config.min_input_size:
            raise ShapeError(
                f"image {height}x{width} is smaller than the {config.pool_stages}-pool "
                f"chain needs ({config.min_input_size})"
            )
        levels: List[FeatureLevel] = []
        x = image
        for (name, spec), stage in zip(self.backbone, self._stage_of_layer):
            if spec.kind is LayerKind.MAXPOOL2X2:
                if stage in config.tap_stages:
                    levels.append(FeatureLevel(feature_map=x, stride=2**stage))
                if stage == config.active_stages - 1:
                    break
            weight, bias = self._layer_params(name)
            x = apply_layer(spec, x, weight, bias)
        return FeaturePyramid(levels=levels, input_height=height, input_width=width)

    def predictor(self, hypercolumns: Tensor) -> Tensor:
        """The MLP ``g``: ``[P, F] -> [P, n_classes]`` logits."""
        if hypercolumns.ndim != 2 or hypercolumns.shape[1] != self.config.hypercolumn_width:
            raise ShapeError(
                f"hypercolumns must be [P,{self.config.hypercolumn_width}], got {hypercolumns.shape}"
            )
        x = hypercolumns
        for name, spec in self.head:
            weight, bias = self._layer_params(name)
            x = apply_layer(spec, x, weight, bias)
        return x


__all__ = ["ModelConfig", "PixelNet", "backbone_specs", "head_specs"]
