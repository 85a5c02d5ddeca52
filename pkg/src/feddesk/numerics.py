"""Deterministic numeric kernel: seeded splittable RNG streams, stable
softmax, cosine similarity, random orthogonal matrices, Dirichlet sampling.

All arrays are 64-bit floats.  Every operation is pure given its inputs, so
values may be shared freely across worker threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, DimensionError, ParameterError

# Vectors with a smaller norm have no usable direction; operations that
# normalize reject them instead of regularizing silently, because the
# dot-regression gradient divides by the feature norm.
NORM_FLOOR = 1e-12

# QR columns with a smaller pivot indicate a (measure-zero) rank-deficient
# draw; the draw is rejected and repeated.
_PIVOT_FLOOR = 1e-10


def _label_entropy(label: str) -> int:
    """Stable 64-bit integer for a path label (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class RngStream:
    """A splittable random stream identified by (root_seed, derivation path).

    The same (root_seed, path) always yields the same stream, and streams
    derived under distinct paths are statistically independent.  Instances
    are immutable values: copying or sharing them across workers is safe,
    and ``generator()`` always restarts the stream from its beginning.
    """

    root_seed: int
    path: tuple[tuple[str, int], ...] = ()

    def child(self, label: str, index: int = 0) -> "RngStream":
        """Derive the sub-stream for (label, index)."""
        return RngStream(self.root_seed, self.path + ((label, index),))

    def generator(self) -> np.random.Generator:
        """Fresh PCG64 generator positioned at the start of this stream."""
        entropy = [self.root_seed & 0xFFFFFFFFFFFFFFFF]
        for label, index in self.path:
            entropy.append(_label_entropy(label))
            entropy.append(index & 0xFFFFFFFFFFFFFFFF)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting empty or non-finite input."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")


def softmax(z) -> np.ndarray:
    """Softmax probabilities of a logit vector, stable under large shifts.

    The maximum entry is subtracted before exponentiation, so uniformly
    shifted inputs give identical outputs and huge logits do not overflow.
    """
    z = as_vector(z, "logits")
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return e / np.sum(e)


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D logit array (max-shifted per row)."""
    shifted = Z - np.max(Z, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def cosine(a, b) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Raises DegenerateVectorError when either norm is below NORM_FLOOR.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise DegenerateVectorError(f"norm below {NORM_FLOOR:g} (got {na:g}, {nb:g})")
    value = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, value))


def random_orthogonal(d: int, c: int, rng: RngStream) -> np.ndarray:
    """A d x c matrix U with orthonormal columns (U^T U = I_c).

    Drawn by QR-factorizing a standard-normal d x c sample; the sign of each
    column is fixed so the result is a deterministic function of the stream.
    A draw whose R pivot falls below 1e-10 is rejected and repeated, which
    keeps the factorization well conditioned (rejection has probability ~0
    for d >= c).
    """
    if d < c:
        raise DimensionError(f"need d >= c for orthonormal columns, got d={d}, c={c}")
    if c < 1:
        raise ParameterError(f"column count must be >= 1, got {c}")
    gen = rng.generator()
    while True:
        sample = gen.standard_normal((d, c))
        q, r = np.linalg.qr(sample, mode="reduced")
        diag = np.diag(r)
        if np.min(np.abs(diag)) < _PIVOT_FLOOR:
            continue
        return np.ascontiguousarray(q * np.sign(diag))


def dirichlet(alpha: float, n: int, rng: RngStream) -> np.ndarray:
    """A symmetric Dirichlet(alpha) sample of length n.

    Sampled as normalized Gamma(alpha, 1) variates from this stream only
    (numpy's generator uses Marsaglia-Tsang rejection internally).  An
    all-underflow draw, possible for very small alpha, is redrawn.
    """
    if alpha <= 0:
        raise ParameterError(f"concentration must be positive, got {alpha}")
    if n < 1:
        raise ParameterError(f"length must be >= 1, got {n}")
    gen = rng.generator()
    while True:
        g = gen.gamma(alpha, 1.0, size=n)
        total = float(np.sum(g))
        if total > 0.0:
            return g / total
