"""Classifier matrices: frozen simplex ETF, frozen random, or trainable.

Class vectors are stored as rows: ``vectors[c]`` is the length-d weight
vector of class c, and logits are computed as ``features @ vectors.T``.
A frozen classifier's array is marked read-only, so training code cannot
mutate it even by accident.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, ParameterError
from .numerics import RngStream, cosine, random_orthogonal

KINDS = ("etf", "random", "trainable")


@dataclass(frozen=True)
class ClassifierMatrix:
    """C class vectors of length d, plus the frozen/trainable contract."""

    vectors: np.ndarray  # (C, d) float64, row c = v_c
    kind: str
    frozen: bool

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown classifier kind {self.kind!r}")
        if self.vectors.ndim != 2:
            raise DimensionError("classifier vectors must be a 2-D array")
        if self.frozen:
            self.vectors.setflags(write=False)

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.vectors.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        """features @ V.T; accepts a single feature vector or a batch."""
        return features @ self.vectors.T

    def unit_rows(self) -> np.ndarray:
        """Row-normalized copy of the class vectors."""
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return self.vectors / norms

    def copy(self) -> "ClassifierMatrix":
        return ClassifierMatrix(self.vectors.copy(), self.kind, self.frozen)


def build_etf(d: int, n_classes: int, rng: RngStream) -> ClassifierMatrix:
    """Frozen simplex-ETF classifier.

    Built as sqrt(C/(C-1)) * U (I_C - (1/C) 1 1^T) with U a random d x C
    orthonormal-column matrix, then stored row-wise.  Every class vector has
    unit norm and every pair meets at cosine -1/(C-1), the maximally
    separated arrangement of C directions.
    """
    if n_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {n_classes}")
    if d < n_classes:
        raise DimensionError(f"need d >= C for the construction, got d={d}, C={n_classes}")
    u = random_orthogonal(d, n_classes, rng)
    centering = np.eye(n_classes) - np.full((n_classes, n_classes), 1.0 / n_classes)
    scale = math.sqrt(n_classes / (n_classes - 1.0))
    vectors = np.ascontiguousarray(scale * (u @ centering).T)
    return ClassifierMatrix(vectors, kind="etf", frozen=True)


def build_random_frozen(d: int, n_classes: int, rng: RngStream) -> ClassifierMatrix:
    """Frozen random classifier: rows are standard normal scaled by 1/sqrt(d),
    so the expected row norm is about 1."""
    if n_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {n_classes}")
    if d < 1:
        raise ParameterError(f"feature dimension must be >= 1, got {d}")
    gen = rng.generator()
    vectors = gen.standard_normal((n_classes, d)) / math.sqrt(d)
    return ClassifierMatrix(np.ascontiguousarray(vectors), kind="random", frozen=True)


def build_trainable(d: int, n_classes: int, rng: RngStream) -> ClassifierMatrix:
    """Trainable classifier with the same scaled-normal init as the random head."""
    if n_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {n_classes}")
    if d < 1:
        raise ParameterError(f"feature dimension must be >= 1, got {d}")
    gen = rng.generator()
    vectors = gen.standard_normal((n_classes, d)) / math.sqrt(d)
    return ClassifierMatrix(np.ascontiguousarray(vectors), kind="trainable", frozen=False)


@dataclass(frozen=True)
class EtfReport:
    """Worst-case deviations of a classifier from the exact ETF geometry."""

    max_norm_deviation: float
    max_cosine_deviation: float
    pairwise_target: float = field(default=0.0)


def validate_etf(cm: ClassifierMatrix) -> EtfReport:
    """Max |norm - 1| and max |cos(v_i, v_j) + 1/(C-1)| over all rows/pairs."""
    if cm.kind != "etf":
        raise ContractError(f"validate_etf expects an ETF classifier, got kind={cm.kind!r}")
    c = cm.n_classes
    target = -1.0 / (c - 1)
    norms = np.linalg.norm(cm.vectors, axis=1)
    norm_dev = float(np.max(np.abs(norms - 1.0)))
    cos_dev = 0.0
    for i in range(c):
        for j in range(i + 1, c):
            cos_dev = max(cos_dev, abs(cosine(cm.vectors[i], cm.vectors[j]) - target))
    return EtfReport(norm_dev, cos_dev, pairwise_target=target)
