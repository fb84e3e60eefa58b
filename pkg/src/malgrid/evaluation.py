"""k-fold cross-validation, accuracy metrics and performance summaries."""
from __future__ import annotations

import logging
import statistics
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .datasets import DatasetError, LabeledDataset
from .model import build_model, parameter_checksum
from .training import FitHistory, TrainConfig, fit

log = logging.getLogger(__name__)


@dataclass
class FoldResult:
    fold_index: int
    accuracy: float
    history: FitHistory
    model_seed: int = 0
    init_checksum: int = 0
    final_checksum: int = 0


@dataclass(frozen=True)
class CvSummary:
    accuracies: tuple[float, ...]
    n: int
    mean: float
    std: float
    min: float
    q1: float
    median: float
    q3: float
    max: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accuracies"] = list(self.accuracies)
        return d


def kfold_split(n: int, k: int = 5, seed: int = 1, labels: Sequence[int] | None = None,
                stratified: bool = False) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition of ``range(n)``.

    The indices are shuffled once with ``RandomState(seed)`` and cut into k
    contiguous chunks, the first ``n % k`` of them one element larger. This
    reproduces scikit-learn's ``KFold(k, shuffle=True, random_state=seed)``.

    With ``stratified=True`` each class is shuffled separately and its members
    are dealt round-robin over the folds, so per-fold class counts differ by at
    most one.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    rng = np.random.RandomState(seed)
    if stratified:
        if labels is None or len(labels) != n:
            raise ValueError("stratified k-fold needs one label per sample")
        labels = np.asarray(labels)
        dealt = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
        tests = [np.sort(dealt[i::k]) for i in range(k)]
    else:
        order = np.arange(n)
        rng.shuffle(order)
        sizes = np.full(k, n // k)
        sizes[: n % k] += 1
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        tests = [order[bounds[i] : bounds[i + 1]] for i in range(k)]
    folds = []
    for test in tests:
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((np.flatnonzero(mask), test))
    return folds


def fold_seed(seed: int, fold_index: int) -> int:
    return int(np.random.SeedSequence([seed, fold_index]).generate_state(1)[0])


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError(f"length mismatch: {predictions.shape} predictions vs {labels.shape} labels")
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(predictions == labels)) / len(labels)


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int], num_classes: int) -> np.ndarray:
    """``[true, predicted]`` counts."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError("length mismatch")
    for name, arr in (("prediction", predictions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} index out of range for {num_classes} classes")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def summarize_performance(fold_accuracies: Sequence[float]) -> CvSummary:
    """Mean, population std and a linearly interpolated five-number summary."""
    scores = np.asarray(fold_accuracies, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no fold accuracies to summarise")
    q = np.percentile(scores, [0, 25, 50, 75, 100], method="linear")
    values = [float(s) for s in scores]
    # statistics works in exact rationals: a constant list gives exactly x and 0
    return CvSummary(tuple(values), len(values), statistics.mean(values), statistics.pstdev(values),
                     *(float(v) for v in q))


def evaluate_model_cv(dataset: LabeledDataset, arch: str, cfg: TrainConfig = TrainConfig(), k: int = 5,
                      stratified: bool = False,
                      on_fold: Callable[[FoldResult], None] | None = None) -> list[FoldResult]:
    """Fit a freshly initialised model per fold and score it on the held-out chunk."""
    if len(dataset) < k:
        raise DatasetError(f"dataset of {len(dataset)} samples is smaller than k={k}")
    results = []
    for i, (train_ix, test_ix) in enumerate(kfold_split(len(dataset), k, cfg.seed, dataset.labels, stratified)):
        seed = fold_seed(cfg.seed, i)
        model = build_model(arch, dataset.side, dataset.num_classes, seed, dataset.class_names)
        init = parameter_checksum(model)
        history = fit(model, dataset.subset(train_ix), dataset.subset(test_ix), cfg)
        result = FoldResult(i, history.records[-1].val_accuracy, history, seed, init, parameter_checksum(model))
        log.info("fold %d: > %.3f", i + 1, result.accuracy * 100.0)
        results.append(result)
        if on_fold is not None:
            on_fold(result)
    return results

