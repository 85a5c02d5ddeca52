"""Synthetic Gaussian-mixture data and CSV ingestion.

The synthetic generator is the desk-scale stand-in for an image benchmark:
class centers drawn once from a scaled normal, samples = center + noise,
stratified 80/20 train/test split, all deterministic under the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .numerics import RngStream


@dataclass(frozen=True)
class TabularData:
    """A labeled dense dataset: features (n, dim) and int labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise DataError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features and labels disagree on the sample count")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(np.max(self.labels)) + 1 if self.n else 0

    def subset(self, indices) -> "TabularData":
        idx = np.asarray(indices, dtype=np.int64)
        return TabularData(
            np.ascontiguousarray(self.features[idx]), self.labels[idx].copy()
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian mixture: C classes in input_dim dimensions."""

    n_classes: int = 10
    input_dim: int = 32
    per_class: int = 200
    center_scale: float = 3.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {self.n_classes}")
        if self.input_dim < 1 or self.per_class < 1:
            raise ParameterError("input_dim and per_class must be >= 1")
        if self.center_scale <= 0 or self.noise < 0:
            raise ParameterError("center_scale must be > 0 and noise >= 0")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "input_dim": self.input_dim,
            "per_class": self.per_class,
            "center_scale": self.center_scale,
            "noise": self.noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


def generate_synthetic(spec: SyntheticSpec) -> tuple[TabularData, TabularData]:
    """Deterministic (train, test) pair with an exact stratified 80/20 split."""
    rng = RngStream(spec.seed)
    while True:
        centers = spec.center_scale * rng.child("centers").generator().standard_normal(
            (spec.n_classes, spec.input_dim)
        )
        deltas = centers[:, None, :] - centers[None, :, :]
        dists = np.linalg.norm(deltas, axis=2) + np.eye(spec.n_classes)
        if np.min(dists) > 0:
            break
    n_train_per = int(round(0.8 * spec.per_class))
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(spec.n_classes):
        gen = rng.child("class", c).generator()
        samples = centers[c] + spec.noise * gen.standard_normal((spec.per_class, spec.input_dim))
        train_x.append(samples[:n_train_per])
        test_x.append(samples[n_train_per:])
        train_y.append(np.full(n_train_per, c, dtype=np.int64))
        test_y.append(np.full(spec.per_class - n_train_per, c, dtype=np.int64))
    train = TabularData(np.ascontiguousarray(np.vstack(train_x)), np.concatenate(train_y))
    test = TabularData(np.ascontiguousarray(np.vstack(test_x)), np.concatenate(test_y))
    return train, test


@dataclass(frozen=True)
class LoadReport:
    n_rows: int
    n_features: int
    class_histogram: tuple


def load_tabular(path) -> tuple[TabularData, LoadReport]:
    """Parse a ``label,f0,f1,...`` CSV with contiguous integer labels from 0."""
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        header = fh.readline().strip()
        if not header:
            raise DataError(f"{path}: empty file")
        columns = header.split(",")
        if columns[0] != "label" or len(columns) < 2:
            raise DataError(f"{path}: header must be 'label,f0,f1,...', got {header!r}")
        n_features = len(columns) - 1
        labels = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_features + 1:
                raise DataError(
                    f"{path}:{lineno}: expected {n_features + 1} fields, got {len(parts)}"
                )
            try:
                labels.append(int(parts[0]))
                rows.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    if np.min(labels) != 0 or set(labels.tolist()) != set(range(int(np.max(labels)) + 1)):
        raise DataError(f"{path}: labels must be contiguous integers starting at 0")
    features = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise DataError(f"{path}: non-finite feature values")
    hist = np.bincount(labels)
    data = TabularData(np.ascontiguousarray(features), labels)
    return data, LoadReport(data.n, n_features, tuple(int(h) for h in hist))
