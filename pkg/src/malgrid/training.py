"""Cross-entropy loss, SGD with classical momentum, and the epoch/batch training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .datasets import DatasetError, LabeledDataset, one_hot_batch
from .model import Model, ShapeError, model_backward, model_forward

log = logging.getLogger(__name__)

LOG_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 32
    seed: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class EpochRecord:
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class FitHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]


def cross_entropy(probs: np.ndarray, target: np.ndarray) -> float:
    """``-sum(target * ln(max(probs, 1e-12)))`` for a single one-hot target."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target)
    if target.shape != probs.shape or not (np.all((target == 0) | (target == 1)) and target.sum() == 1):
        raise ValueError("target must be a one-hot vector matching probs")
    return float(-np.log(max(float(probs[int(np.argmax(target))]), LOG_EPS)))


def sample_losses(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    picked = probs[np.arange(len(labels)), labels].astype(np.float64)
    return -np.log(np.maximum(picked, LOG_EPS))


def zero_velocity(params: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


def sgd_momentum_step(params: list[np.ndarray], grads: Sequence[np.ndarray], velocity: list[np.ndarray],
                      lr: float, momentum: float):
    """In place: ``v <- momentum * v - lr * g``, then ``theta <- theta + v``."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("params, grads and velocity differ in length")
    for theta, g, v in zip(params, grads, velocity):
        if not (theta.shape == g.shape == v.shape):
            raise ShapeError(f"shape mismatch: param {theta.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v -= lr * g
        theta += v
    return params, velocity


def epoch_order(n: int, seed: int, epoch_index: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch_index])))
    return rng.permutation(n)


def batches(order: np.ndarray, batch_size: int) -> Iterator[np.ndarray]:
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def _check_data(model: Model, data: LabeledDataset) -> None:
    if len(data) == 0:
        raise DatasetError("empty dataset")
    if data.side != model.input_side:
        raise ShapeError(f"dataset images are {data.side}px but the model expects {model.input_side}px")
    if data.num_classes > model.num_classes:
        raise ShapeError(f"dataset has {data.num_classes} classes, model outputs {model.num_classes}")


def train_epoch(model: Model, data: LabeledDataset, cfg: TrainConfig, velocity: list[np.ndarray],
                epoch_index: int) -> tuple[float, float]:
    """One shuffled pass of mini-batch SGD. Returns (mean sample loss, accuracy) as seen
    during the pass, i.e. each batch is scored before its own update."""
    _check_data(model, data)
    loss_sum, correct = 0.0, 0
    for idx in batches(epoch_order(len(data), cfg.seed, epoch_index), cfg.batch_size):
        labels = data.labels[idx]
        trace = model_forward(model, data.images[idx])
        loss_sum += float(sample_losses(trace.probs, labels).sum())
        correct += int((np.argmax(trace.probs, axis=1) == labels).sum())
        grads = model_backward(model, trace, one_hot_batch(labels, model.num_classes))
        sgd_momentum_step(model.params, grads, velocity, cfg.learning_rate, cfg.momentum)
    return loss_sum / len(data), correct / len(data)


def evaluate_dataset(model: Model, data: LabeledDataset, batch_size: int = 256) -> tuple[float, float]:
    """(mean loss, accuracy) without touching the parameters."""
    _check_data(model, data)
    loss_sum, correct = 0.0, 0
    for start in range(0, len(data), batch_size):
        labels = data.labels[start : start + batch_size]
        probs = model_forward(model, data.images[start : start + batch_size]).probs
        loss_sum += float(sample_losses(probs, labels).sum())
        correct += int((np.argmax(probs, axis=1) == labels).sum())
    return loss_sum / len(data), correct / len(data)


def fit(model: Model, train: LabeledDataset, val: LabeledDataset, cfg: TrainConfig,
        on_epoch: Callable[[int, EpochRecord], None] | None = None) -> FitHistory:
    _check_data(model, val)
    velocity = zero_velocity(model.params)
    history = FitHistory()
    for epoch in range(cfg.epochs):
        train_loss, train_acc = train_epoch(model, train, cfg, velocity, epoch)
        val_loss, val_acc = evaluate_dataset(model, val)
        record = EpochRecord(train_loss, train_acc, val_loss, val_acc)
        history.records.append(record)
        log.debug("epoch %d: %s", epoch + 1, record)
        if on_epoch is not None:
            on_epoch(epoch, record)
    return history
