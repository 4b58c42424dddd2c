"""Sparse-pixel training and dense inference for :class:`PixelNet`.

Training looks at one slice per step: sample ``N`` pixels, run the backbone
once, extract hypercolumns only at the sampled pixels, and take one SGD step
on their cross-entropy.  Inference runs the backbone once on the full image
and feeds the hypercolumn of every pixel through the same predictor, in row
blocks of ``tile_height`` rows.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from pixseg.errors import NumericError, PixsegError, ShapeError
from pixseg.hypercolumn import extract_hypercolumns, row_block_pixels
from pixseg.layers import log_softmax, softmax_cross_entropy
from pixseg.model import ModelConfig, PixelNet
from pixseg.optim import Sgd
from pixseg.sampling import PixelBatch, SamplePlan, derive_seed, sample_pixels
from pixseg.tensor import Tensor, no_grad
from pixseg.volume import LabeledSlice

logger = logging.getLogger(__name__)

# Second entropy word for the slice-order generator; the bare seed belongs to
# the weight initializer.
ORDER_STREAM = 1


@dataclass
class DensePrediction:
    labels: np.ndarray         # [H, W] class indices
    probabilities: np.ndarray  # [K, H, W]
    logits: np.ndarray         # [K, H, W]


# Index 0 of the derive_seed sequence is the seed itself, which initializes the
# weights; step t samples with index t + 1.
def sampling_seed(seed: int, step: int) -> int:
    return derive_seed(seed, step + 1)


def sample_plan(config: ModelConfig, seed: int) -> SamplePlan:
    return SamplePlan(
        n_total=config.n_sample_pixels,
        strategy=config.sampler,
        seed=seed,
        ignore_label=config.ignore_label,
        deficit_policy=config.deficit_policy,
    )


def forward_sparse(model: PixelNet, item: LabeledSlice, batch: PixelBatch) -> Tensor:
    """Logits ``[N, n_classes]`` at the batch pixels, differentiable end to end."""
    coords = np.asarray(batch.coords)
    if coords.size and (
        coords[:, 0].min() < 0
        or coords[:, 1].min() < 0
        or coords[:, 0].max() >= item.height
        or coords[:, 1].max() >= item.width
    ):
        raise ShapeError(f"batch coordinates fall outside the {item.height}x{item.width} slice")
    pyramid = model.features(Tensor(item.image))
    return model.predictor(extract_hypercolumns(pyramid, coords))


def predict_dense(model: PixelNet, image: np.ndarray, workers: int = 1) -> DensePrediction:
    """Label map and class probabilities for every pixel of ``image``."""
    image = np.asarray(image, dtype=np.float64)
    config = model.config
    with no_grad():
        pyramid = model.features(Tensor(image))
        _, height, width = image.shape
        starts = list(range(0, height, config.tile_height))

        def run_block(start: int) -> np.ndarray:
            stop = min(start + config.tile_height, height)
            pixels = row_block_pixels(start, stop, width)
            return model.predictor(extract_hypercolumns(pyramid, pixels)).data

        if workers > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                blocks = list(pool.map(run_block, starts))
        else:
            blocks = [run_block(start) for start in starts]

    logits = np.concatenate(blocks, axis=0)
    probabilities = np.exp(log_softmax(logits))
    n_classes = logits.shape[1]
    return DensePrediction(
        labels=np.argmax(logits, axis=1).reshape(height, width),
        probabilities=probabilities.T.reshape(n_classes, height, width),
        logits=logits.T.reshape(n_classes, height, width),
    )


class Segmenter:
    """Owns a model, its optimizer state and the step counter."""

    def __init__(self, model: PixelNet) -> None:
        self.model = model
        self.optimizer = Sgd(model.parameters(), model.config.sgd)
        self.step_count = 0
        self.training = True

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def train(self) -> "Segmenter":
        self.training = True
        return self

    def eval(self) -> "Segmenter":
        self.training = False
        return self

    def train_step(self, item: LabeledSlice, seed: Optional[int] = None) -> float:
        """Sample, forward, backward, update; returns the pre-update loss."""
        if not self.training:
            raise PixsegError("train_step called while the segmenter is in eval mode")
        item.check_classes(self.config.n_classes)
        if seed is None:
            seed = sampling_seed(self.config.sgd.seed, self.step_count)
        batch = sample_pixels(item.mask, sample_plan(self.config, seed), item.valid)
        logits = forward_sparse(self.model, item, batch)
        loss = softmax_cross_entropy(logits, batch.labels)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at step {self.step_count}")
        loss.backward()
        self.optimizer.step()
        self.model.zero_grad()
        self.step_count += 1
        return value

    def fit(
        self,
        slices: Sequence[LabeledSlice],
        iterations: Optional[int] = None,
        on_step: Optional[Callable[[int, float], None]] = None,
    ) -> List[float]:
        """Train for ``iterations`` steps, cycling through seeded slice permutations."""
        if not slices:
            raise ShapeError("no training slices")
        iterations = self.config.iterations if iterations is None else iterations
        order_rng = np.random.default_rng([self.config.sgd.seed, ORDER_STREAM])
        order: List[int] = []
        losses: List[float] = []
        for step in range(iterations):
            if not order:
                order = order_rng.permutation(len(slices)).tolist()
            loss = self.train_step(slices[order.pop(0)])
            losses.append(loss)
            if on_step is not None:
                on_step(step, loss)
            if self.config.log_every and (step + 1) % self.config.log_every == 0:
                window = losses[-self.config.log_every:]
                logger.info("step %d/%d mean loss %.4f", step + 1, iterations, float(np.mean(window)))
        return losses

    def predict(self, image: np.ndarray, workers: int = 1) -> DensePrediction:
        return predict_dense(self.model, image, workers=workers)


def train_step(segmenter: Segmenter, item: LabeledSlice) -> float:
    return segmenter.train_step(item)


__all__ = [
    "DensePrediction",
    "Segmenter",
    "forward_sparse",
    "predict_dense",
    "sample_plan",
    "sampling_seed",
    "train_step",
]
