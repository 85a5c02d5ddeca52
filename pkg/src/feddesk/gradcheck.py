"""Finite-difference validation of every analytic gradient path.

For random small networks, the end-to-end parameter gradient produced by
the trainer's loss + backward machinery is compared against central
differences of the loss value.  Sampled configurations are re-drawn when a
ReLU pre-activation or a feature norm sits too close to a kink, where a
finite difference cannot approximate the one-sided derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import build_etf
from .errors import ContractError
from .losses import GlobalSnapshot, LossSpec, batch_loss, composite_loss
from .model import (
    ModelParams,
    backward_batch,
    flatten,
    flatten_grads,
    forward,
    forward_batch,
    init_mlp,
    unflatten,
)
from .numerics import RngStream

# Default menu: every base loss and every regularizer, at the temperatures
# and coefficients used throughout.
STANDARD_SPECS = (
    ("ce", LossSpec(base="ce")),
    ("dr", LossSpec(base="dr")),
    ("fd", LossSpec(base="drplus", beta=0.0)),
    ("drplus", LossSpec(base="drplus", beta=0.9)),
    ("kd", LossSpec(base="ce", regularizer="kd", weight=1.0, tau=3.0)),
    ("ntd", LossSpec(base="ce", regularizer="ntd", weight=1.0, tau=3.0)),
    ("ld", LossSpec(base="ce", regularizer="ld", weight=1.0)),
    ("prox", LossSpec(base="ce", regularizer="prox", mu=0.01)),
)

_KINK_FLOOR = 1e-4   # min |preactivation| so +-h stays on one ReLU side
_FEATURE_FLOOR = 1e-2  # min feature norm so direction-based losses are smooth


def analytic_param_grad(
    spec: LossSpec, x: np.ndarray, y: int, params: ModelParams, snapshot: GlobalSnapshot | None
) -> np.ndarray:
    """Flat parameter gradient through the trainer's batched path (B = 1)."""
    trace = forward_batch(params, x[None, :])
    result = batch_loss(
        spec,
        params,
        trace,
        np.array([y]),
        _teacher(snapshot, x, "features"),
        _teacher(snapshot, x, "logits"),
        snapshot.flat() if spec.regularizer == "prox" else None,
    )
    grads = backward_batch(
        params, trace, result.dfeatures, None if params.classifier.frozen else result.dlogits
    )
    flat = flatten_grads(params, grads)
    if spec.regularizer == "prox":
        flat = flat + spec.mu * (flatten(params) - snapshot.flat())
    return flat


def _teacher(snapshot: GlobalSnapshot | None, x: np.ndarray, what: str):
    if snapshot is None:
        return None
    trace = forward_batch(snapshot.params, x[None, :])
    return getattr(trace, what)


def _loss_value(spec: LossSpec, x, y, params, snapshot) -> float:
    return composite_loss(spec, x, y, params, snapshot).value


def _sample_case(rng: RngStream):
    """A random net, teacher net, and input away from ReLU kinks."""
    for attempt in range(100):
        gen = rng.child("case", attempt).generator()
        n_classes = int(gen.integers(2, 9))
        d = int(gen.integers(n_classes, 17))
        hidden = int(gen.integers(2, 17))
        n_in = int(gen.integers(2, 17))
        cm = build_etf(d, n_classes, rng.child("cls", attempt))
        params = init_mlp((n_in, hidden, d), cm, rng.child("net", attempt))
        teacher = init_mlp((n_in, hidden, d), cm, rng.child("teacher", attempt))
        x = gen.standard_normal(n_in)
        y = int(gen.integers(0, n_classes))
        trace = forward(params, x)
        min_pre = min(float(np.min(np.abs(p))) for p in trace.preacts)
        feat_norm = float(np.linalg.norm(trace.features[0]))
        teacher_feat = forward(teacher, x).features[0]
        if (
            min_pre > _KINK_FLOOR
            and feat_norm > _FEATURE_FLOOR
            and float(np.linalg.norm(teacher_feat)) > _FEATURE_FLOOR
        ):
            return params, teacher, x, y
    raise ContractError("could not sample a kink-free gradient-check case")


def max_relative_error(
    spec: LossSpec, params: ModelParams, teacher: ModelParams, x: np.ndarray, y: int, h: float
) -> float:
    """Max over parameters of |analytic - central difference| / scale."""
    snapshot = GlobalSnapshot(teacher) if (spec.needs_snapshot()) else None
    analytic = analytic_param_grad(spec, x, y, params, snapshot)
    theta = flatten(params)
    worst = 0.0
    for i in range(theta.shape[0]):
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        v_up = _loss_value(spec, x, y, unflatten(up, params), snapshot)
        v_down = _loss_value(spec, x, y, unflatten(down, params), snapshot)
        numeric = (v_up - v_down) / (2.0 * h)
        scale = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / scale)
    return worst


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    trials: int
    max_error: float


def run_gradcheck(
    trials: int = 20,
    tolerance: float = 1e-4,
    seed: int = 0,
    h: float = 1e-6,
    specs=STANDARD_SPECS,
) -> tuple[list, bool]:
    """Check every loss on ``trials`` random nets; returns (results, all_ok)."""
    results = []
    ok = True
    for name, spec in specs:
        worst = 0.0
        for trial in range(trials):
            rng = RngStream(seed).child(name).child("trial", trial)
            params, teacher, x, y = _sample_case(rng)
            worst = max(worst, max_relative_error(spec, params, teacher, x, y, h))
        results.append(GradCheckResult(name, trials, worst))
        ok = ok and worst < tolerance
    return results, ok
