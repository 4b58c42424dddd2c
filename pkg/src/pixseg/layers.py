"""Differentiable layer primitives: 3x3 convolution, ReLU, 2x2 max pooling,
affine maps and the softmax cross-entropy loss.

All image-shaped tensors are single images laid out as ``[C, H, W]``; the
engine never batches across slices, so there is no leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pixseg.errors import ShapeError
from pixseg.modes import LayerKind
from pixseg.tensor import Tensor

KERNEL_SIZE = 3
PADDING = 1


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one backbone or head layer."""

    kind: LayerKind
    in_features: int = 0
    out_features: int = 0
    kernel_size: int = KERNEL_SIZE
    stride: int = 1
    padding: int = PADDING

    def __post_init__(self) -> None:
        if self.kind is LayerKind.CONV2D:
            if self.kernel_size != KERNEL_SIZE or self.padding != PADDING or self.stride != 1:
                raise ShapeError("conv2d layers use a 3x3 kernel, stride 1 and padding 1")
        if self.kind in (LayerKind.CONV2D, LayerKind.LINEAR):
            if self.in_features <= 0 or self.out_features <= 0:
                raise ShapeError(f"{self.kind.value} needs positive in/out sizes")

    @property
    def fan_in(self) -> int:
        if self.kind is LayerKind.CONV2D:
            return self.in_features * self.kernel_size * self.kernel_size
        return self.in_features

    def weight_shape(self) -> Optional[Tuple[int, ...]]:
        if self.kind is LayerKind.CONV2D:
            return (self.out_features, self.in_features, self.kernel_size, self.kernel_size)
        if self.kind is LayerKind.LINEAR:
            return (self.out_features, self.in_features)
        return None


def he_uniform(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``U(-sqrt(6/fan_in), +sqrt(6/fan_in))`` samples."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


def _im2col(padded: np.ndarray, height: int, width: int) -> np.ndarray:
    # [C, H+2, W+2] -> [H*W, C*9], tap order (c, ki, kj) matching weight.reshape(O, -1)
    windows = sliding_window_view(padded, (KERNEL_SIZE, KERNEL_SIZE), axis=(1, 2))
    channels = padded.shape[0]
    return windows.transpose(1, 2, 0, 3, 4).reshape(height * width, channels * KERNEL_SIZE**2)


def conv2d(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1: ``[C_in,H,W] -> [C_out,H,W]``."""
    if input.ndim != 3:
        raise ShapeError(f"conv2d input must be [C,H,W], got rank {input.ndim}")
    c_in, height, width = input.shape
    if height < 1 or width < 1:
        raise ShapeError(f"conv2d input spatial dims must be >= 1, got {height}x{width}")
    if weight.ndim != 4 or weight.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise ShapeError(f"conv2d weight must be [C_out,C_in,3,3], got {weight.shape}")
    c_out = weight.shape[0]
    if weight.shape[1] != c_in:
        raise ShapeError(
            f"conv2d channel mismatch: input C_in={c_in}, weight C_in={weight.shape[1]}"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias must be [C_out={c_out}], got {bias.shape}")

    padded = np.pad(input.data, ((0, 0), (PADDING, PADDING), (PADDING, PADDING)))
    cols = _im2col(padded, height, width)
    w_mat = weight.data.reshape(c_out, -1)
    out = (cols @ w_mat.T).T.reshape(c_out, height, width) + bias.data[:, None, None]

    def backward(g: np.ndarray):
        g_mat = g.reshape(c_out, height * width)
        grad_w = (g_mat @ cols).reshape(weight.shape)
        grad_b = g.sum(axis=(1, 2))
        grad_cols = (g_mat.T @ w_mat).reshape(height, width, c_in, KERNEL_SIZE, KERNEL_SIZE)
        grad_padded = np.zeros_like(padded)
        for ki in range(KERNEL_SIZE):
            for kj in range(KERNEL_SIZE):
                grad_padded[:, ki:ki + height, kj:kj + width] += grad_cols[:, :, :, ki, kj].transpose(2, 0, 1)
        grad_x = grad_padded[:, PADDING:PADDING + height, PADDING:PADDING + width]
        return grad_x, grad_w, grad_b

    return Tensor.from_op(out, (input, weight, bias), backward, "conv2d")


def relu(input: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at exactly zero is zero."""
    active = input.data > 0
    return Tensor.from_op(
        np.where(active, input.data, 0.0), (input,), lambda g: (g * active,), "relu"
    )


def maxpool2x2(input: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 (floor division of odd sizes).

    The backward pass routes each gradient to the first maximal cell of its
    window in row-major scan order.
    """
    if input.ndim != 3:
        raise ShapeError(f"maxpool2x2 input must be [C,H,W], got rank {input.ndim}")
    channels, height, width = input.shape
    if height < 2 or width < 2:
        raise ShapeError(f"maxpool2x2 needs spatial dims >= 2, got {height}x{width}")
    out_h, out_w = height // 2, width // 2
    cropped = input.data[:, : out_h * 2, : out_w * 2]
    windows = (
        cropped.reshape(channels, out_h, 2, out_w, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(channels, out_h, out_w, 4)
    )
    winner = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
    shape = input.shape

    def backward(g: np.ndarray):
        routed = np.zeros((channels, out_h, out_w, 4))
        np.put_along_axis(routed, winner[..., None], g[..., None], axis=-1)
        grad = np.zeros(shape)
        grad[:, : out_h * 2, : out_w * 2] = (
            routed.reshape(channels, out_h, out_w, 2, 2)
            .transpose(0, 1, 3, 2, 4)
            .reshape(channels, out_h * 2, out_w * 2)
        )
        return (grad,)

    return Tensor.from_op(out, (input,), backward, "maxpool2x2")


def linear(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Row-wise affine map ``[B,F_in] -> [B,F_out]``."""
    if input.ndim != 2:
        raise ShapeError(f"linear input must be [B,F_in], got rank {input.ndim}")
    if weight.ndim != 2 or weight.shape[1] != input.shape[1]:
        raise ShapeError(
            f"linear F_in mismatch: input F_in={input.shape[1]}, weight shape {weight.shape}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias must be [F_out={weight.shape[0]}], got {bias.shape}")
    x, w = input.data, weight.data

    def backward(g: np.ndarray):
        return g @ w, g.T @ x, g.sum(axis=0)

    return Tensor.from_op(x @ w.T + bias.data, (input, weight, bias), backward, "linear")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [B,K], got rank {logits.ndim}")
    batch, n_classes = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != batch:
        raise ShapeError(f"got {targets.shape[0]} targets for a batch of {batch}")
    if batch == 0:
        raise ShapeError("cross-entropy needs a non-empty batch")
    if np.any(targets < 0) or np.any(targets >= n_classes):
        bad = int(targets[(targets < 0) | (targets >= n_classes)][0])
        raise ShapeError(f"target {bad} outside [0, {n_classes})")

    log_probs = log_softmax(logits.data)
    rows = np.arange(batch)
    loss = -log_probs[rows, targets].mean()

    def backward(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g / batch),)

    return Tensor.from_op(loss, (logits,), backward, "softmax_cross_entropy")


def apply_layer(spec: LayerSpec, x: Tensor, weight: Optional[Tensor], bias: Optional[Tensor]) -> Tensor:
    """Run the primitive described by ``spec`` on ``x``."""
    if spec.kind is LayerKind.CONV2D:
        return conv2d(x, weight, bias)
    if spec.kind is LayerKind.LINEAR:
        return linear(x, weight, bias)
    if spec.kind is LayerKind.RELU:
        return relu(x)
    if spec.kind is LayerKind.MAXPOOL2X2:
        return maxpool2x2(x)
    return x


__all__ = [
    "LayerSpec",
    "he_uniform",
    "conv2d",
    "relu",
    "maxpool2x2",
    "linear",
    "log_softmax",
    "softmax",
    "softmax_cross_entropy",
    "apply_layer",
]
