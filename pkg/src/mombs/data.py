"""Synthetic Gaussian-blob datasets (long-tailed, symmetric label noise) and CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np


class TrainingSample(NamedTuple):
    x: np.ndarray
    y: int
    index: int


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    provenance: str = ""
    clean_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("features must form an (N, D) matrix")
        if len(self.X) != len(self.y):
            raise ValueError("feature and label counts differ")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError(f"labels outside 0..{self.num_classes - 1}")
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
            if self.clean_labels.shape != self.y.shape:
                raise ValueError("clean_labels shape mismatch")

    def __len__(self):
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> list[TrainingSample]:
        return [TrainingSample(self.X[i], int(self.y[i]), i) for i in range(len(self))]

    def class_counts(self, clean: bool = False) -> np.ndarray:
        labels = self.clean_labels if clean and self.clean_labels is not None else self.y
        return np.bincount(labels, minlength=self.num_classes)

    def subset(self, idx, provenance: str = "") -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.X[idx], self.y[idx], self.num_classes, provenance or self.provenance,
            None if self.clean_labels is None else self.clean_labels[idx],
        )


@dataclass(frozen=True)
class BlobSpec:
    """Class-conditional isotropic Gaussians with randomly placed means.

    Means are drawn N(0, separation^2 I) per class; every class shares the same
    spread ``scale``.
    """

    num_classes: int = 10
    dim: int = 8
    separation: float = 2.0
    scale: float = 1.0
    seed: int = 0

    def means(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 0])
        return rng.normal(0.0, self.separation, size=(self.num_classes, self.dim))


@dataclass(frozen=True)
class LTSpec:
    num_classes: int = 10
    n_max: int = 200
    imbalance_ratio: float = 0.01
    dim: int = 8
    separation: float = 2.0
    scale: float = 1.0
    n_test_per_class: int = 100
    seed: int = 0

    @property
    def blobs(self) -> BlobSpec:
        return BlobSpec(self.num_classes, self.dim, self.separation, self.scale, self.seed)


@dataclass(frozen=True)
class NLSpec:
    num_classes: int = 10
    n_per_class: int = 50
    noise_rate: float = 0.4
    dim: int = 8
    separation: float = 2.0
    scale: float = 1.0
    n_test_per_class: int = 100
    seed: int = 0

    @property
    def blobs(self) -> BlobSpec:
        return BlobSpec(self.num_classes, self.dim, self.separation, self.scale, self.seed)


def longtail_counts(num_classes: int, n_max: int, rho: float) -> np.ndarray:
    """round(n_max * rho ** (i / (C - 1))) per class i."""
    if not 0 < rho <= 1:
        raise ValueError("imbalance ratio must lie in (0, 1]")
    if num_classes == 1:
        return np.array([n_max])
    i = np.arange(num_classes)
    counts = np.floor(n_max * rho ** (i / (num_classes - 1)) + 0.5).astype(np.int64)
    if counts.min() < 1:
        raise ValueError(f"class {int(np.argmin(counts))} would receive no samples")
    return counts


def sample_blobs(blobs: BlobSpec, counts, stream: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([blobs.seed, stream])
    means = blobs.means()
    y = np.repeat(np.arange(blobs.num_classes), counts)
    X = means[y] + rng.normal(0.0, blobs.scale, size=(len(y), blobs.dim))
    return X, y


def gen_longtail(spec: LTSpec) -> Dataset:
    """Training set with exponentially decaying class sizes."""
    counts = longtail_counts(spec.num_classes, spec.n_max, spec.imbalance_ratio)
    X, y = sample_blobs(spec.blobs, counts, stream=1)
    return Dataset(X, y, spec.num_classes, provenance=f"longtail:{spec}")


def gen_longtail_test(spec: LTSpec) -> Dataset:
    """Balanced held-out set drawn from the same class Gaussians."""
    counts = np.full(spec.num_classes, spec.n_test_per_class)
    X, y = sample_blobs(spec.blobs, counts, stream=2)
    return Dataset(X, y, spec.num_classes, provenance=f"longtail-test:{spec}")


def flip_symmetric(labels, num_classes: int, rate: float, rng) -> np.ndarray:
    """Move round(rate * N) randomly chosen labels to a uniformly drawn wrong class."""
    if not 0 <= rate < 1:
        raise ValueError("noise rate must lie in [0, 1)")
    labels = np.asarray(labels, dtype=np.int64)
    noisy = labels.copy()
    n_flip = int(np.floor(rate * len(labels) + 0.5))
    chosen = rng.permutation(len(labels))[:n_flip]
    # shift by 1..C-1 so the new class is uniform over the wrong ones
    shift = rng.integers(1, num_classes, size=n_flip)
    noisy[chosen] = (labels[chosen] + shift) % num_classes
    return noisy


def gen_noisy(spec: NLSpec) -> Dataset:
    """Balanced training set whose labels are symmetrically corrupted."""
    counts = np.full(spec.num_classes, spec.n_per_class)
    X, clean = sample_blobs(spec.blobs, counts, stream=1)
    rng = np.random.default_rng([spec.seed, 3])
    noisy = flip_symmetric(clean, spec.num_classes, spec.noise_rate, rng)
    return Dataset(X, noisy, spec.num_classes, provenance=f"noisy:{spec}", clean_labels=clean)


def gen_noisy_test(spec: NLSpec) -> Dataset:
    counts = np.full(spec.num_classes, spec.n_test_per_class)
    X, y = sample_blobs(spec.blobs, counts, stream=2)
    return Dataset(X, y, spec.num_classes, provenance=f"noisy-test:{spec}")


def save_csv(dataset: Dataset, path) -> None:
    """Write feature_0..feature_{D-1},label[,clean_label]; floats use repr so values round-trip."""
    header = [f"feature_{j}" for j in range(dataset.dim)] + ["label"]
    if dataset.clean_labels is not None:
        header.append("clean_label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.X[i]] + [int(dataset.y[i])]
            if dataset.clean_labels is not None:
                row.append(int(dataset.clean_labels[i]))
            w.writerow(row)


class CSVFormatError(ValueError):
    pass


def _parse_label(text, lineno, num_classes):
    try:
        lab = int(text)
    except ValueError:
        raise CSVFormatError(f"row {lineno}: unknown label {text!r}") from None
    if lab < 0 or (num_classes is not None and lab >= num_classes):
        raise CSVFormatError(f"row {lineno}: unknown label {text!r}")
    return lab


def load_csv(path, num_classes: Optional[int] = None, label_column: str = "label") -> Dataset:
    """Read a tabular dataset; every column except the label ones is a feature.

    Labels must be non-negative integers (below ``num_classes`` when given).
    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError("no samples: file is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise CSVFormatError(f"missing {label_column!r} column")
        li = header.index(label_column)
        ci = header.index("clean_label") if "clean_label" in header else None
        fi = [k for k, h in enumerate(header) if k not in (li, ci)]
        if not fi:
            raise CSVFormatError("no feature columns")
        X, y, clean = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CSVFormatError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                X.append([float(row[k]) for k in fi])
            except ValueError:
                raise CSVFormatError(f"row {lineno}: non-numeric feature") from None
            y.append(_parse_label(row[li], lineno, num_classes))
            if ci is not None:
                clean.append(_parse_label(row[ci], lineno, num_classes))
    if not y:
        raise CSVFormatError("no samples")
    C = num_classes if num_classes is not None else max(max(y), max(clean, default=0)) + 1
    return Dataset(np.array(X), np.array(y), C, provenance=str(path),
                   clean_labels=np.array(clean) if ci is not None else None)


def split(dataset: Dataset, test_fraction: float, seed) -> tuple[Dataset, Dataset]:
    """Stratified split by clean class when known, else by observed label."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    strata = dataset.clean_labels if dataset.clean_labels is not None else dataset.y
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(strata == c)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
        members = rng.permutation(members)
        k = int(np.floor(test_fraction * len(members) + 0.5))
        k = min(max(k, 1), len(members) - 1)
        test_idx.append(members[:k])
        train_idx.append(members[k:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return dataset.subset(train), dataset.subset(test)
