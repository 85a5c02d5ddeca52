"""Pure-numpy implementations of the training hot-path kernels.

This is the fallback backend; feddesk._kernels (Cython) exposes the same
functions.  Shapes follow the batched MLP convention: activations are
(batch, dim) and weights are (out, in).
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def affine_nt(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x @ w.T + b for x (m, k), w (n, k), b (n,)."""
    return x @ w.T + b


def matmul_nn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b for a (m, k), b (k, n)."""
    return a @ b


def matmul_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a.T @ b for a (k, m), b (k, n)."""
    return a.T @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, preact: np.ndarray) -> np.ndarray:
    """Mask grad where preact <= 0 (subgradient at 0 is 0)."""
    return np.where(preact > 0.0, grad, 0.0)


def colsum(a: np.ndarray) -> np.ndarray:
    return np.sum(a, axis=0)


def sgd_update(
    param: np.ndarray,
    grad: np.ndarray,
    mom: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """In-place classic momentum step: buf = m*buf + (g + wd*p); p -= lr*buf."""
    g = grad + weight_decay * param
    mom *= momentum
    mom += g
    param -= lr * mom
