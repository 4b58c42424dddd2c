"""Central finite-difference gradient checks for the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Tuple

import numpy as np

from pixseg.tensor import Tensor

DEFAULT_EPSILON = 1e-5
# Denominator floor: keeps the ratio meaningful for gradients that are
# numerically zero, where finite differences only see rounding noise.
RELATIVE_FLOOR = 1e-6
# Entries whose estimates at epsilon and 2*epsilon disagree by more than this
# straddle a ReLU or max-pool switch.
KINK_TOLERANCE = 1e-4


def numerical_gradient(
    loss_fn: Callable[[], Tensor], tensor: Tensor, epsilon: float = DEFAULT_EPSILON
) -> np.ndarray:
    """Estimate ``d loss_fn() / d tensor`` entry by entry.

    ``tensor.data`` is perturbed in place and restored afterwards.
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    estimate = np.zeros_like(flat)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + epsilon
        plus = loss_fn().item()
        flat[index] = original - epsilon
        minus = loss_fn().item()
        flat[index] = original
        estimate[index] = (plus - minus) / (2.0 * epsilon)
    return estimate.reshape(tensor.shape)


def elementwise_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` per entry."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), RELATIVE_FLOOR)
    return np.abs(analytic - numeric) / denominator


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest :func:`elementwise_relative_error` over all entries."""
    errors = elementwise_relative_error(analytic, numeric)
    return float(errors.max()) if errors.size else 0.0


def _analytic_gradients(
    loss_fn: Callable[[], Tensor], named: Iterable[Tuple[str, Tensor]]
) -> Dict[str, np.ndarray]:
    named = list(named)
    for _, tensor in named:
        tensor.zero_grad()
    loss_fn().backward()
    return {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in named
    }


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tuple[str, Tensor]],
    epsilon: float = DEFAULT_EPSILON,
) -> Dict[str, float]:
    """Return the max relative error per named parameter.

    The analytic gradient comes from a single ``backward()`` on a fresh loss.
    """
    named = list(params)
    analytic = _analytic_gradients(loss_fn, named)
    return {
        name: relative_error(analytic[name], numerical_gradient(loss_fn, tensor, epsilon))
        for name, tensor in named
    }


@dataclass
class SmoothCheck:
    """Result of :func:`check_gradients_off_kinks` for one parameter."""

    error: float       # max relative error over the kept entries
    kept: float        # fraction of entries kept
    n_entries: int


def check_gradients_off_kinks(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tuple[str, Tensor]],
    epsilon: float = DEFAULT_EPSILON,
) -> Dict[str, SmoothCheck]:
    """Like :func:`check_gradients`, skipping entries that sit next to a kink.

    Piecewise-linear layers make the loss non-differentiable where a ReLU input
    or a max-pool winner changes. An entry is compared against the analytic
    gradient only when its central differences at ``epsilon`` and
    ``2 * epsilon`` agree within ``KINK_TOLERANCE``; the caller decides how
    many skipped entries are acceptable through ``kept``.
    """
    named = list(params)
    analytic = _analytic_gradients(loss_fn, named)
    results: Dict[str, SmoothCheck] = {}
    for name, tensor in named:
        fine = numerical_gradient(loss_fn, tensor, epsilon)
        coarse = numerical_gradient(loss_fn, tensor, 2.0 * epsilon)
        smooth = elementwise_relative_error(fine, coarse) <= KINK_TOLERANCE
        errors = elementwise_relative_error(analytic[name], fine)[smooth]
        results[name] = SmoothCheck(
            error=float(errors.max()) if errors.size else 0.0,
            kept=float(smooth.mean()) if smooth.size else 1.0,
            n_entries=int(smooth.size),
        )
    return results


__all__ = [
    "numerical_gradient",
    "elementwise_relative_error",
    "relative_error",
    "check_gradients",
    "check_gradients_off_kinks",
    "SmoothCheck",
    "DEFAULT_EPSILON",
    "KINK_TOLERANCE",
]
