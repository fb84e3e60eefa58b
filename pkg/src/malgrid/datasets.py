"""Corpus loading, splitting, label encoding and a synthetic texture corpus."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .imaging import INPUT_SIDE, ImagingError, bytes_to_image, prepare_input, read_pgm
from .tensor_core import DTYPE

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    images: np.ndarray  # [N, side, side, 1], values in [0, 1]
    labels: np.ndarray  # [N] class indices
    class_names: tuple[str, ...]

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=DTYPE)
        labels = np.asarray(self.labels, dtype=np.int64)
        names = tuple(self.class_names)
        if images.ndim != 4 or images.shape[3] != 1 or images.shape[1] != images.shape[2]:
            raise DatasetError(f"images must be [N, side, side, 1], got {images.shape}")
        if len(images) < 1 or len(images) != len(labels):
            raise DatasetError(f"need equal, non-zero image/label counts ({len(images)} vs {len(labels)})")
        if list(names) != sorted(set(names)):
            raise DatasetError("class names must be unique and sorted")
        if labels.min() < 0 or labels.max() >= len(names):
            raise DatasetError("label out of range of class_names")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.images[indices], self.labels[indices], self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= label < num_classes:
        raise DatasetError(f"label {label} out of range for {num_classes} classes")
    out = np.zeros(num_classes, dtype=DTYPE)
    out[label] = 1.0
    return out


def one_hot_batch(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DatasetError(f"label out of range for {num_classes} classes")
    return np.eye(num_classes, dtype=DTYPE)[labels]


def load_sample(path: str | os.PathLike, side: int = INPUT_SIDE) -> np.ndarray:
    """A ``.pgm`` file is read as an image; anything else is treated as a raw binary."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        img = read_pgm(path)
    else:
        img = bytes_to_image(path.read_bytes())
    return prepare_input(img, side)


def load_corpus(root: str | os.PathLike, side: int = INPUT_SIDE) -> LabeledDataset:
    """Load ``<root>/<family>/<sample>`` with families indexed in sorted name order."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: corpus root is not a directory")
    families = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not families:
        raise DatasetError(f"{root}: no family directories found")
    images, labels = [], []
    for idx, family in enumerate(families):
        count = 0
        for f in sorted(p for p in (root / family).iterdir() if p.is_file() and not p.name.startswith(".")):
            if f.stat().st_size == 0:
                log.warning("skipping empty sample %s", f)
                continue
            try:
                images.append(load_sample(f, side))
            except ImagingError as exc:
                raise DatasetError(f"{f}: {exc}") from None
            labels.append(idx)
            count += 1
        if count == 0:
            raise DatasetError(f"{root / family}: family directory has no readable samples")
    return LabeledDataset(np.stack(images), np.array(labels), tuple(families))


def _train_count(fraction: float, n: int) -> int:
    # round first so 0.7 * 100 -> 70, not 71
    return math.ceil(round(fraction * n, 9))


def split_train_test(ds: LabeledDataset, train_fraction: float = 0.7, seed: int = 1,
                     stratified: bool = True) -> tuple[LabeledDataset, LabeledDataset]:
    """Shuffle (per class when stratified) and send the first ceil(fraction * n) to train."""
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    train_idx: list[np.ndarray] = []
    if stratified:
        counts = ds.class_counts()
        for c in range(ds.num_classes):
            if counts[c] == 1:
                raise DatasetError(
                    f"class {ds.class_names[c]!r} has a single sample; use stratified=False"
                )
        for c in range(ds.num_classes):
            members = np.flatnonzero(ds.labels == c)
            if members.size == 0:
                continue
            members = rng.permutation(members)
            train_idx.append(members[: _train_count(train_fraction, members.size)])
    else:
        perm = rng.permutation(len(ds))
        train_idx.append(perm[: _train_count(train_fraction, len(ds))])
    mask = np.zeros(len(ds), dtype=bool)
    mask[np.concatenate(train_idx)] = True
    if mask.all():
        raise DatasetError("split leaves the test set empty")
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


# -- synthetic corpus ----------------------------------------------------------

SYNTH_PERIODS = (2, 4, 8, 16, 32)  # divisors of the 32-pixel row: texture survives vertical resizing
SYNTH_AMPLITUDE = 95
SYNTH_MIN_BYTES = 2 * 1024
SYNTH_MAX_BYTES = 8 * 1024


@dataclass(frozen=True)
class SynthFamilySpec:
    family_id: int
    period: int
    phase: int
    base: int
    amplitude: int = SYNTH_AMPLITUDE
    noise: float = 0.1
    seed: int = 1

    def __post_init__(self):
        if self.period not in SYNTH_PERIODS:
            raise ValueError(f"period must be one of {SYNTH_PERIODS}")
        if not 0 <= self.phase < self.period:
            raise ValueError("phase must lie in [0, period)")
        if not (0 <= self.base and self.base + self.amplitude <= 255):
            raise ValueError("base + amplitude must fit in a byte")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must be a fraction")

    @property
    def name(self) -> str:
        return f"family_{self.family_id:02d}"

    def pattern(self, n: int) -> np.ndarray:
        # triangle wave over the period
        t = ((np.arange(n) + self.phase) % self.period) / self.period
        return np.rint(self.base + self.amplitude * (1.0 - np.abs(2.0 * t - 1.0))).astype(np.uint8)

    def sample(self, index: int) -> bytes:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, self.family_id, index])))
        size = int(rng.integers(SYNTH_MIN_BYTES, SYNTH_MAX_BYTES, endpoint=True))
        data = self.pattern(size)
        hit = rng.random(size) < self.noise
        data[hit] = rng.integers(0, 256, size=int(hit.sum()), dtype=np.uint8)
        return data.tobytes()


def synthetic_families(num_families: int, seed: int = 1, noise: float = 0.1) -> list[SynthFamilySpec]:
    if num_families < 2:
        raise DatasetError("need at least two families")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5EED])))
    specs = []
    for f in range(num_families):
        period = SYNTH_PERIODS[f % len(SYNTH_PERIODS)]
        base = (37 * (f // len(SYNTH_PERIODS))) % (256 - SYNTH_AMPLITUDE)
        specs.append(SynthFamilySpec(f, period, int(rng.integers(period)), base, noise=noise, seed=seed))
    return specs


def synthetic_payloads(num_families: int, samples_per_family: int, seed: int = 1,
                       noise: float = 0.1) -> Iterator[tuple[str, int, bytes]]:
    """Yield ``(family name, sample index, raw bytes)`` in family-then-sample order."""
    if samples_per_family < 2:
        raise DatasetError("need at least two samples per family")
    for spec in synthetic_families(num_families, seed, noise):
        for i in range(samples_per_family):
            yield spec.name, i, spec.sample(i)


def generate_synthetic(num_families: int, samples_per_family: int, seed: int = 1,
                       noise: float = 0.1, side: int = INPUT_SIDE) -> LabeledDataset:
    names = [s.name for s in synthetic_families(num_families, seed, noise)]
    images, labels = [], []
    for name, _, payload in synthetic_payloads(num_families, samples_per_family, seed, noise):
        images.append(prepare_input(bytes_to_image(payload), side))
        labels.append(names.index(name))
    return LabeledDataset(np.stack(images), np.array(labels), tuple(names))


def write_synthetic_corpus(out_dir: str | os.PathLike, num_families: int, samples_per_family: int,
                           seed: int = 1, noise: float = 0.1) -> Sequence[Path]:
    out_dir = Path(out_dir)
    written = []
    for name, i, payload in synthetic_payloads(num_families, samples_per_family, seed, noise):
        fam = out_dir / name
        fam.mkdir(parents=True, exist_ok=True)
        path = fam / f"sample_{i:05d}.bin"
        path.write_bytes(payload)
        written.append(path)
    return written
