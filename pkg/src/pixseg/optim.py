"""Stochastic gradient descent with heavy-ball momentum and L2 weight decay.

Update rule, applied per parameter tensor::

    v <- momentum * v + grad + weight_decay * param
    param <- param - learning_rate * v

Gradients are read but never cleared; the caller zeroes them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from pixseg.errors import ConfigError, NumericError
from pixseg.tensor import Tensor

MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def sgd_step(
    params: Sequence[Tensor],
    config: SgdConfig,
    velocities: Optional[List[np.ndarray]] = None,
) -> List[np.ndarray]:
    """Apply one update in place and return the (new) momentum buffers.

    Every update is computed and checked before any parameter is written, so
    a NumericError leaves the parameters and buffers untouched.
    """
    if velocities is None:
        velocities = [np.zeros_like(p.data) for p in params]
    staged = []
    for index, param in enumerate(params):
        grad = param.grad if param.grad is not None else 0.0
        velocity = config.momentum * velocities[index] + grad + config.weight_decay * param.data
        updated = param.data - config.learning_rate * velocity
        if not np.all(np.isfinite(updated)):
            raise NumericError(f"SGD update produced non-finite values in parameter #{index}")
        staged.append((velocity, updated))
    new_velocities = []
    for param, (velocity, updated) in zip(params, staged):
        param.data = updated
        new_velocities.append(velocity)
    return new_velocities


class Sgd:
    """Stateful wrapper keeping one momentum buffer per parameter."""

    def __init__(self, params: Sequence[Tensor], config: SgdConfig) -> None:
        self.params = list(params)
        self.config = config
        self._velocities: Optional[List[np.ndarray]] = None

    def step(self) -> None:
        self._velocities = sgd_step(self.params, self.config, self._velocities)


__all__ = ["SgdConfig", "Sgd", "sgd_step", "MAX_SEED"]
