"""Losses, Adam and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from priornet import ops
from priornet.errors import NumericalAbort, ShapeError, UsageError
from priornet.model import MIN_SIZE, ModelWeights, forward, restore_tensor, save_weights
from priornet.tensor import ParamRegistry, Tensor, backward

logger = logging.getLogger(__name__)

PERCEPTUAL_BETA = 0.1


@dataclass
class LossBreakdown:
    mse: float
    perceptual: float
    beta: float = PERCEPTUAL_BETA
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.mse + self.beta * self.perceptual


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4
    iterations: int = 2000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    perceptual_enabled: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.iterations < 0 or self.adam_eps <= 0:
            raise UsageError("training hyperparameters must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise UsageError("Adam decay rates must lie in [0, 1)")


# -- feature extractors ------------------------------------------------------

class FeatureExtractor:
    """Frozen image -> feature map. Subclasses implement ``__call__`` on tensors."""

    identifier = "abstract"

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return []


class IdentityExtractor(FeatureExtractor):
    identifier = "identity"

    def __call__(self, x: Tensor) -> Tensor:
        return x


class RandomConvExtractor(FeatureExtractor):
    """Three seeded 3x3 conv + ReLU layers (3 -> 8 -> 8 -> 8), stride 2 into layers 2 and 3.

    Stands in for a pretrained perceptual network. Weights never require
    gradients, so the trainer cannot update them.
    """

    identifier = "rand-conv-v1"
    widths = (3, 8, 8, 8)

    def __init__(self, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.layers = []
        for c_in, c_out in zip(self.widths, self.widths[1:]):
            std = math.sqrt(2.0 / (c_in * 9))
            w = Tensor(rng.normal(0.0, std, (c_out, c_in, 3, 3)).astype(dtype), dtype=dtype)
            b = Tensor(np.zeros(c_out, dtype=dtype), dtype=dtype)
            self.layers.append((w, b))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-3] != 3:
            raise ShapeError(f"{self.identifier} expects 3-channel images, got {x.shape}")
        for i, (w, b) in enumerate(self.layers):
            x = ops.relu(ops.conv2d(x, w, b, stride=1 if i == 0 else 2))
        return x

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]


def default_extractor(seed: int = 0) -> FeatureExtractor:
    return RandomConvExtractor(seed)


# -- losses ------------------------------------------------------------------

def _check_pair(gt, out):
    if gt.shape != out.shape:
        raise ShapeError(f"loss inputs differ in shape: {gt.shape} vs {out.shape}")


def mse_loss(gt, out) -> float:
    """Mean squared difference over every channel and pixel, accumulated in float64."""
    gt = np.asarray(gt, dtype=np.float64)
    out = np.asarray(out, dtype=np.float64)
    _check_pair(gt, out)
    return float(np.mean((gt - out) ** 2))


def mse_tensor(gt: Tensor, out: Tensor) -> Tensor:
    _check_pair(gt, out)
    return ops.mean(ops.square(ops.sub(out, gt)))


def perceptual_tensor(gt: Tensor, out: Tensor, fx: FeatureExtractor) -> Tensor:
    _check_pair(gt, out)
    return mse_tensor(fx(gt), fx(out))


def perceptual_loss(gt, out, fx: FeatureExtractor | None = None) -> float:
    """Mean squared feature difference, averaged over the batch.

    ``gt``/``out`` are (3, H, W) images or (N, 3, H, W) batches. All images in
    a batch share extents, so the batch mean equals the mean over every
    feature entry.
    """
    fx = fx or default_extractor()
    dtype = np.float64
    g = Tensor(np.asarray(gt, dtype=dtype), dtype=dtype)
    o = Tensor(np.asarray(out, dtype=dtype), dtype=dtype)
    _check_pair(g, o)
    fg, fo = fx(g).data, fx(o).data
    return float(np.mean((fg.astype(np.float64) - fo.astype(np.float64)) ** 2))


# -- optimiser -----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamRegistry, grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update; parameter arrays are replaced, not mutated."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, t in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        if g.shape != t.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {t.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        elif m.shape != t.shape:
            raise ShapeError(f"optimizer state for {name} drifted from {m.shape} to {t.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        t.data = (t.data - update).astype(t.dtype)
    return state


# -- loop ----------------------------------------------------------------------

@dataclass
class TrainResult:
    weights: ModelWeights
    history: list[LossBreakdown]


Pair = tuple[np.ndarray, np.ndarray]  # (hazy, clean), each 3 x H x W


def batch_loss(weights: ModelWeights, pairs: Sequence[Pair], fx: FeatureExtractor | None
               ) -> tuple[Tensor, LossBreakdown]:
    """Differentiable total loss for one batch plus its float64 breakdown.

    Images of equal size are stacked into one batch tensor; mixed sizes fall
    back to a per-image mean.
    """
    dtype = weights.params.tensors()[0].dtype
    groups: dict[tuple, list[Pair]] = {}
    for p in pairs:
        groups.setdefault(p[0].shape, []).append(p)
    terms, mse_sum, perc_sum = [], 0.0, 0.0
    for group in groups.values():
        x = Tensor(np.stack([h for h, _ in group]).astype(dtype), dtype=dtype)
        gt = Tensor(np.stack([c for _, c in group]).astype(dtype), dtype=dtype)
        out = restore_tensor(x, forward(weights, x), weights.config.bias_b)
        mse_t = mse_tensor(gt, out)
        frac = len(group) / len(pairs)
        mse_sum += frac * float(np.mean((out.data.astype(np.float64) - gt.data) ** 2))
        term = mse_t
        if fx is not None:
            perc_t = perceptual_tensor(gt, out, fx)
            perc_sum += frac * float(perc_t.data)
            term = ops.add(mse_t, ops.mul(perc_t, PERCEPTUAL_BETA))
        terms.append(ops.mul(term, frac))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total, LossBreakdown(mse=mse_sum, perceptual=perc_sum)


def train(weights: ModelWeights, dataset: Sequence[Pair], config: TrainConfig,
          extractor: FeatureExtractor | None = None, checkpoint_path: str | Path | None = None,
          callback: Callable[[int, LossBreakdown], None] | None = None) -> TrainResult:
    """Train a copy of ``weights``; the input weights are left untouched.

    Batches are drawn from a fresh seeded permutation each epoch. Any
    non-finite loss raises :class:`NumericalAbort`.
    """
    if not dataset:
        raise UsageError("training dataset is empty")
    for i, (hazy, clean) in enumerate(dataset):
        if hazy.shape != clean.shape or hazy.ndim != 3 or hazy.shape[0] != 3:
            raise ShapeError(f"pair {i}: hazy {hazy.shape} and clean {clean.shape} must both be 3 x H x W")
        if min(hazy.shape[1:]) < MIN_SIZE:
            raise ShapeError(f"pair {i}: images must be at least {MIN_SIZE}x{MIN_SIZE}")
    fx = None
    if config.perceptual_enabled:
        fx = extractor or default_extractor(config.seed)
    weights = weights.copy()
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history: list[LossBreakdown] = []
    order: list[int] = []
    bs = min(config.batch_size, len(dataset))
    for it in range(config.iterations):
        if len(order) < bs:
            order.extend(rng.permutation(len(dataset)).tolist())
        idx, order = order[:bs], order[bs:]
        loss, parts = batch_loss(weights, [dataset[i] for i in idx], fx)
        if not (math.isfinite(parts.total) and np.isfinite(loss.data).all()):
            raise NumericalAbort(f"non-finite loss at iteration {it}: mse={parts.mse} perceptual={parts.perceptual}")
        history.append(parts)
        weights.params.zero_grad()
        backward(loss)
        grads = {n: t.grad for n, t in weights.params if t.grad is not None}
        for n, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericalAbort(f"non-finite gradient for {n} at iteration {it}")
        adam_step(weights.params, grads, state, config)
        if callback is not None:
            callback(it, parts)
        if checkpoint_path is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            save_weights(weights, checkpoint_path)
            logger.info("checkpoint at iteration %d -> %s", it + 1, checkpoint_path)
    weights.params.zero_grad()
    return TrainResult(weights, history)


def write_loss_csv(history: Sequence[LossBreakdown], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "mse", "perceptual", "total"])
        for i, h in enumerate(history):
            w.writerow([i, repr(h.mse), repr(h.perceptual), repr(h.total)])


def dataset_mse(weights: ModelWeights, dataset: Sequence[Pair]) -> float:
    """Mean training-graph (unclamped) MSE over a dataset, image by image."""
    dtype = weights.params.tensors()[0].dtype
    vals = []
    for hazy, clean in dataset:
        x = Tensor(hazy.astype(dtype), dtype=dtype)
        out = restore_tensor(x, forward(weights, x), weights.config.bias_b)
        vals.append(mse_loss(clean, out.data))
    return float(np.mean(vals))
