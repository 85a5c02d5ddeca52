"""One local training episode: mini-batch SGD with momentum and weight decay.

Shared by the federated round loop and the personalized fine-tuning stage.
Momentum buffers start at zero for every episode, batches are reshuffled
each epoch from the episode's own stream, and a frozen classifier is never
touched (no gradient, no weight decay).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import get_backend
from .losses import GlobalSnapshot, LossSpec, batch_loss
from .model import Gradients, ModelParams, backward_batch, forward_batch
from .numerics import RngStream


@dataclass(frozen=True)
class EpisodeOptions:
    """Hyperparameters of one local episode (one client, one round)."""

    loss: LossSpec
    epochs: int
    batch_size: int
    lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-5


class MomentumState:
    """Per-array momentum buffers, zero-initialized."""

    def __init__(self, params: ModelParams):
        self.weights = [np.zeros_like(w) for w in params.weights]
        self.biases = [np.zeros_like(b) for b in params.biases]
        self.classifier = (
            None if params.classifier.frozen else np.zeros_like(params.classifier.vectors)
        )


def sgd_step(
    params: ModelParams,
    grads: Gradients,
    state: MomentumState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """In-place momentum update of every trainable array, layers in order."""
    k = get_backend()
    for w, gw, mw in zip(params.weights, grads.weights, state.weights):
        k.sgd_update(w.ravel(), gw.ravel(), mw.ravel(), lr, momentum, weight_decay)
    for b, gb, mb in zip(params.biases, grads.biases, state.biases):
        k.sgd_update(b, gb, mb, lr, momentum, weight_decay)
    if state.classifier is not None and grads.classifier is not None:
        k.sgd_update(
            params.classifier.vectors.ravel(),
            grads.classifier.ravel(),
            state.classifier.ravel(),
            lr,
            momentum,
            weight_decay,
        )


def run_episode(
    start: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    opts: EpisodeOptions,
    snapshot: GlobalSnapshot | None,
    stream: RngStream,
) -> ModelParams:
    """Train a copy of ``start`` on (X, y) and return it.

    The snapshot (the broadcast global model) is forward-passed once over
    the client's data; its features/logits act as the distillation teacher
    for every batch of the episode.
    """
    params = start.clone()
    spec = opts.loss
    needs_teacher = (spec.base == "drplus" and spec.beta < 1.0) or spec.regularizer in (
        "kd",
        "ntd",
        "ld",
    )
    F_g = Z_g = None
    if needs_teacher:
        teacher = forward_batch(snapshot.params, X)
        F_g, Z_g = teacher.features, teacher.logits
    anchor = snapshot.flat() if spec.regularizer == "prox" else None
    prox_refs = snapshot.params if spec.regularizer == "prox" else None

    state = MomentumState(params)
    trainable_head = not params.classifier.frozen
    n = X.shape[0]
    for epoch in range(opts.epochs):
        order = stream.child("epoch", epoch).generator().permutation(n)
        for lo in range(0, n, opts.batch_size):
            idx = order[lo : lo + opts.batch_size]
            trace = forward_batch(params, X[idx])
            result = batch_loss(
                spec,
                params,
                trace,
                y[idx],
                F_g[idx] if F_g is not None else None,
                Z_g[idx] if Z_g is not None else None,
                anchor,
            )
            grads = backward_batch(
                params, trace, result.dfeatures, result.dlogits if trainable_head else None
            )
            if prox_refs is not None:
                _add_prox_grads(params, prox_refs, grads, spec.mu)
            sgd_step(params, grads, state, opts.lr, opts.momentum, opts.weight_decay)
    return params


def _add_prox_grads(params: ModelParams, anchor: ModelParams, grads: Gradients, mu: float) -> None:
    """Add mu * (theta - theta_g) array-wise; equals the flat proximal gradient."""
    for gw, w, wg in zip(grads.weights, params.weights, anchor.weights):
        gw += mu * (w - wg)
    for gb, b, bg in zip(grads.biases, params.biases, anchor.biases):
        gb += mu * (b - bg)
    if grads.classifier is not None:
        grads.classifier += mu * (params.classifier.vectors - anchor.classifier.vectors)
