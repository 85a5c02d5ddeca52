"""Local objectives and regularizers, each with its analytic gradient.

Base losses: cross-entropy (with its pulling/pushing decomposition in
feature space), dot-regression 0.5*(cos(f, v_y) - 1)^2, and their convex
"drplus" combination beta*DR + (1-beta)*FD where FD is the mean-squared
feature distance (1/d)*||f_local - f_global||^2 to the broadcast global
model.  Regularizers added on top of a base loss: a proximal parameter
penalty, temperature-softened logit distillation (kd), the same excluding
the true-class logit (ntd), and raw-logit mean-squared distillation (ld).

Scalar functions operate on single samples and mirror the analysis oracles;
``batch_loss`` is the vectorized path the trainer runs.  Gradients returned
by ``batch_loss`` are scaled by 1/B so that summing per-sample
contributions yields the gradient of the batch mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .backend import get_backend
from .classifier import ClassifierMatrix
from .errors import ConfigError, DegenerateVectorError, DimensionError, ParameterError
from .numerics import NORM_FLOOR, softmax, softmax_rows

BASES = ("ce", "dr", "drplus")
REGULARIZERS = ("prox", "kd", "ntd", "ld")


@dataclass(frozen=True)
class LossSpec:
    """Which local objective a client optimizes.

    beta is the drplus mixing weight (1 = pure dot-regression, 0 = pure
    feature distillation); weight scales the kd/ntd/ld regularizers; tau is
    the distillation temperature; mu is the proximal coefficient.
    """

    base: str = "ce"
    beta: float = 0.9
    regularizer: str | None = None
    weight: float = 0.0
    tau: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if self.base not in BASES:
            raise ParameterError(f"unknown base loss {self.base!r}")
        if self.regularizer is not None and self.regularizer not in REGULARIZERS:
            raise ParameterError(f"unknown regularizer {self.regularizer!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterError(f"beta must lie in [0, 1], got {self.beta}")
        if self.regularizer in ("kd", "ntd") and self.tau <= 0:
            raise ParameterError(f"temperature must be positive, got {self.tau}")
        if self.mu < 0:
            raise ParameterError(f"mu must be >= 0, got {self.mu}")
        if self.weight < 0:
            raise ParameterError(f"weight must be >= 0, got {self.weight}")

    def needs_snapshot(self) -> bool:
        if self.base == "drplus" and self.beta < 1.0:
            return True
        return self.regularizer is not None

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "beta": self.beta,
            "regularizer": self.regularizer,
            "weight": self.weight,
            "tau": self.tau,
            "mu": self.mu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(**d)


@dataclass
class GlobalSnapshot:
    """The broadcast global model, immutable during a local episode.

    Serves as the distillation teacher (features and logits) and the
    proximal anchor (flat extractor parameters).
    """

    params: model_mod.ModelParams

    def __post_init__(self):
        self._flat = None

    def flat(self) -> np.ndarray:
        if self._flat is None:
            self._flat = model_mod.flatten(self.params)
        return self._flat


def _check_class(y: int, n_classes: int) -> int:
    y = int(y)
    if not 0 <= y < n_classes:
        raise ParameterError(f"class index {y} outside [0, {n_classes})")
    return y


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z)
    return shifted - np.log(np.sum(np.exp(shifted)))


def _log_softmax_rows(Z: np.ndarray) -> np.ndarray:
    shifted = Z - np.max(Z, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# cross-entropy


def ce_loss(z, y: int) -> float:
    """-log softmax(z)_y, computed through the shifted log-sum-exp."""
    z = np.asarray(z, dtype=np.float64)
    y = _check_class(y, z.shape[0])
    return float(-_log_softmax(z)[y])


def ce_logit_grad(z, y: int) -> np.ndarray:
    """softmax(z) - e_y, exactly."""
    z = np.asarray(z, dtype=np.float64)
    y = _check_class(y, z.shape[0])
    g = softmax(z).copy()
    g[y] -= 1.0
    return g


def ce_feature_grad(f, cm: ClassifierMatrix, y: int):
    """Feature-space CE gradient and its pulling/pushing decomposition.

    pull = (1 - p_y) v_y attracts the feature toward the true class vector;
    push = -sum_{c != y} p_c v_c drives it away from the others; the full
    gradient is -(pull + push), so full + (pull + push) vanishes exactly.
    """
    f = np.asarray(f, dtype=np.float64)
    v = cm.vectors
    if f.shape != (v.shape[1],):
        raise DimensionError(f"feature length {f.shape} != classifier dim {v.shape[1]}")
    y = _check_class(y, cm.n_classes)
    p = softmax(v @ f)
    pull = (1.0 - p[y]) * v[y]
    others = p[:, None] * v
    push = -(np.sum(others[:y], axis=0) + np.sum(others[y + 1 :], axis=0))
    full = -(pull + push)
    return full, pull, push


# ---------------------------------------------------------------------------
# dot-regression and feature distillation


def _unit(v: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    n = float(np.linalg.norm(v))
    if n < NORM_FLOOR:
        raise DegenerateVectorError(f"{what} norm {n:g} below {NORM_FLOOR:g}")
    return v / n, n


def dr_loss(f, cm: ClassifierMatrix, y: int) -> float:
    """0.5 * (cos(f, v_y) - 1)^2; zero iff the feature points along v_y.

    The cosine is taken against the normalized class vector so the loss is
    well defined for non-unit (e.g. frozen random) heads.
    """
    f = np.asarray(f, dtype=np.float64)
    y = _check_class(y, cm.n_classes)
    fhat, _ = _unit(f, "feature")
    vhat, _ = _unit(cm.vectors[y], "class vector")
    c = min(1.0, max(-1.0, float(np.dot(fhat, vhat))))
    return 0.5 * (c - 1.0) ** 2


def dr_feature_grad(f, cm: ClassifierMatrix, y: int) -> np.ndarray:
    """(c - 1) (v_hat_y - c f_hat) / ||f||, with c = cos(f, v_y).

    Orthogonal to f: the loss depends only on the feature's direction.
    """
    f = np.asarray(f, dtype=np.float64)
    y = _check_class(y, cm.n_classes)
    fhat, fnorm = _unit(f, "feature")
    vhat, _ = _unit(cm.vectors[y], "class vector")
    c = min(1.0, max(-1.0, float(np.dot(fhat, vhat))))
    return (c - 1.0) * (vhat - c * fhat) / fnorm


def fd_loss(f_local, f_global) -> float:
    """Mean-squared feature distance (1/d) ||f_local - f_global||^2."""
    fl = np.asarray(f_local, dtype=np.float64)
    fg = np.asarray(f_global, dtype=np.float64)
    if fl.shape != fg.shape:
        raise DimensionError(f"feature shapes differ: {fl.shape} vs {fg.shape}")
    diff = fl - fg
    return float(np.dot(diff, diff) / fl.shape[0])


def fd_feature_grad(f_local, f_global) -> np.ndarray:
    fl = np.asarray(f_local, dtype=np.float64)
    fg = np.asarray(f_global, dtype=np.float64)
    if fl.shape != fg.shape:
        raise DimensionError(f"feature shapes differ: {fl.shape} vs {fg.shape}")
    return (2.0 / fl.shape[0]) * (fl - fg)


def drplus_loss(f_local, f_global, cm: ClassifierMatrix, y: int, beta: float) -> float:
    """beta * DR + (1 - beta) * FD; endpoints reproduce the pure losses
    bit-for-bit (the other branch is not evaluated at all)."""
    if beta == 1.0:
        return dr_loss(f_local, cm, y)
    if beta == 0.0:
        return fd_loss(f_local, f_global)
    return beta * dr_loss(f_local, cm, y) + (1.0 - beta) * fd_loss(f_local, f_global)


def drplus_feature_grad(f_local, f_global, cm: ClassifierMatrix, y: int, beta: float) -> np.ndarray:
    if beta == 1.0:
        return dr_feature_grad(f_local, cm, y)
    if beta == 0.0:
        return fd_feature_grad(f_local, f_global)
    return beta * dr_feature_grad(f_local, cm, y) + (1.0 - beta) * fd_feature_grad(
        f_local, f_global
    )


# ---------------------------------------------------------------------------
# regularizers


def prox_penalty(theta_local, theta_global, mu: float) -> float:
    """(mu/2) ||theta - theta_g||^2 over flat parameter vectors."""
    tl = np.asarray(theta_local, dtype=np.float64)
    tg = np.asarray(theta_global, dtype=np.float64)
    if tl.shape != tg.shape:
        raise DimensionError(f"parameter shapes differ: {tl.shape} vs {tg.shape}")
    diff = tl - tg
    return 0.5 * mu * float(np.dot(diff, diff))


def prox_grad(theta_local, theta_global, mu: float) -> np.ndarray:
    tl = np.asarray(theta_local, dtype=np.float64)
    tg = np.asarray(theta_global, dtype=np.float64)
    if tl.shape != tg.shape:
        raise DimensionError(f"parameter shapes differ: {tl.shape} vs {tg.shape}")
    return mu * (tl - tg)


def kd_loss(z_local, z_global, tau: float) -> float:
    """tau^2 * KL(softmax(z_global/tau) || softmax(z_local/tau)).

    The global model is the teacher; gradient flows into local logits only.
    """
    zl = np.asarray(z_local, dtype=np.float64)
    zg = np.asarray(z_global, dtype=np.float64)
    if zl.shape != zg.shape:
        raise DimensionError(f"logit shapes differ: {zl.shape} vs {zg.shape}")
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    log_ql = _log_softmax(zl / tau)
    log_qg = _log_softmax(zg / tau)
    qg = np.exp(log_qg)
    return tau * tau * float(np.sum(qg * (log_qg - log_ql)))


def kd_logit_grad(z_local, z_global, tau: float) -> np.ndarray:
    """tau * (softmax(z_local/tau) - softmax(z_global/tau))."""
    zl = np.asarray(z_local, dtype=np.float64)
    zg = np.asarray(z_global, dtype=np.float64)
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    return tau * (softmax(zl / tau) - softmax(zg / tau))


def ntd_loss(z_local, z_global, y: int, tau: float) -> float:
    """kd_loss on the C-1 not-true logits (the true index is removed before
    softening).  With C = 2 a single logit remains and the loss is 0."""
    zl = np.asarray(z_local, dtype=np.float64)
    zg = np.asarray(z_global, dtype=np.float64)
    y = _check_class(y, zl.shape[0])
    if zl.shape[0] <= 2:
        return 0.0
    return kd_loss(np.delete(zl, y), np.delete(zg, y), tau)


def ntd_logit_grad(z_local, z_global, y: int, tau: float) -> np.ndarray:
    zl = np.asarray(z_local, dtype=np.float64)
    zg = np.asarray(z_global, dtype=np.float64)
    y = _check_class(y, zl.shape[0])
    grad = np.zeros_like(zl)
    if zl.shape[0] <= 2:
        return grad
    reduced = kd_logit_grad(np.delete(zl, y), np.delete(zg, y), tau)
    grad[:y] = reduced[:y]
    grad[y + 1 :] = reduced[y:]
    return grad


def ld_loss(z_local, z_global) -> float:
    """(1/C) ||z_local - z_global||^2 over the raw logit vectors."""
    zl = np.asarray(z_local, dtype=np.float64)
    zg = np.asarray(z_global, dtype=np.float64)
    if zl.shape != zg.shape:
        raise DimensionError(f"logit shapes differ: {zl.shape} vs {zg.shape}")
    diff = zl - zg
    return float(np.dot(diff, diff) / zl.shape[0])


def ld_logit_grad(z_local, z_global) -> np.ndarray:
    zl = np.asarray(z_local, dtype=np.float64)
    zg = np.asarray(z_global, dtype=np.float64)
    if zl.shape != zg.shape:
        raise DimensionError(f"logit shapes differ: {zl.shape} vs {zg.shape}")
    return (2.0 / zl.shape[0]) * (zl - zg)


# ---------------------------------------------------------------------------
# composition


@dataclass
class CompositeResult:
    """Value plus the gradients a training step needs.

    dfeatures is dL/df.  dlogits is dL/dz when logit-space terms are
    present (cross-entropy or a logit regularizer); the feature-space
    contribution of dlogits is already folded into dfeatures, so dlogits is
    only for a trainable classifier's own gradient.  dflat is the proximal
    parameter-space gradient in flatten() order, or None.
    """

    value: float
    dfeatures: np.ndarray
    dlogits: np.ndarray | None
    dflat: np.ndarray | None


def composite_loss(
    spec: LossSpec,
    x,
    y: int,
    params: model_mod.ModelParams,
    snapshot: GlobalSnapshot | None,
) -> CompositeResult:
    """Evaluate the configured objective on one sample.

    The value is base + weight * regularizer (or the beta mix for drplus);
    gradients are composed the same way.  A snapshot is required whenever
    the spec references the global model.
    """
    if spec.needs_snapshot() and snapshot is None:
        raise ConfigError(f"loss {spec} requires a global snapshot")
    x = np.asarray(x, dtype=np.float64)
    trace = model_mod.forward(params, x)
    f = trace.features[0]
    z = trace.logits[0]
    cm = params.classifier

    f_g = z_g = None
    if snapshot is not None:
        gtrace = model_mod.forward(snapshot.params, x)
        f_g = gtrace.features[0]
        z_g = gtrace.logits[0]

    dlogits = None
    if spec.base == "ce":
        value = ce_loss(z, y)
        dlogits = ce_logit_grad(z, y)
        dfeatures = dlogits @ cm.vectors
    elif spec.base == "dr":
        value = dr_loss(f, cm, y)
        dfeatures = dr_feature_grad(f, cm, y)
    else:
        value = drplus_loss(f, f_g, cm, y, spec.beta)
        dfeatures = drplus_feature_grad(f, f_g, cm, y, spec.beta)

    dflat = None
    if spec.regularizer == "prox":
        flat_local = model_mod.flatten(params)
        value += prox_penalty(flat_local, snapshot.flat(), spec.mu)
        dflat = prox_grad(flat_local, snapshot.flat(), spec.mu)
    elif spec.regularizer in ("kd", "ntd", "ld"):
        if spec.regularizer == "kd":
            rv = kd_loss(z, z_g, spec.tau)
            rg = kd_logit_grad(z, z_g, spec.tau)
        elif spec.regularizer == "ntd":
            rv = ntd_loss(z, z_g, y, spec.tau)
            rg = ntd_logit_grad(z, z_g, y, spec.tau)
        else:
            rv = ld_loss(z, z_g)
            rg = ld_logit_grad(z, z_g)
        value += spec.weight * rv
        reg_dz = spec.weight * rg
        dfeatures = dfeatures + reg_dz @ cm.vectors
        dlogits = reg_dz if dlogits is None else dlogits + reg_dz

    return CompositeResult(float(value), dfeatures, dlogits, dflat)


@dataclass
class BatchLoss:
    """Batch-mean loss value and 1/B-scaled per-sample gradients."""

    value: float
    dfeatures: np.ndarray        # (B, d)
    dlogits: np.ndarray | None   # (B, C)
    prox_value: float            # included in value; kept for records


def batch_loss(
    spec: LossSpec,
    params: model_mod.ModelParams,
    trace: model_mod.ForwardTrace,
    y: np.ndarray,
    snapshot_features: np.ndarray | None,
    snapshot_logits: np.ndarray | None,
    prox_anchor: np.ndarray | None,
) -> BatchLoss:
    """Vectorized composite loss over a forward-traced batch.

    ``snapshot_features``/``snapshot_logits`` are the teacher's rows for the
    same inputs; ``prox_anchor`` is the global flat parameter vector.  The
    proximal term contributes to the value here but its parameter-space
    gradient is applied by the trainer directly on the parameter arrays.
    """
    k = get_backend()
    F = trace.features
    Z = trace.logits
    B = F.shape[0]
    cm = params.classifier
    inv_b = 1.0 / B

    dZ = None
    if spec.base == "ce":
        value = float(np.mean(_ce_rows(Z, y)))
        P = softmax_rows(Z)
        P[np.arange(B), y] -= 1.0
        dZ = P * inv_b
        dF = np.zeros_like(F)
    elif spec.base == "dr":
        value, dF = _dr_rows(F, cm, y)
        dF = dF * inv_b
    else:
        if spec.beta == 1.0:
            value, dF = _dr_rows(F, cm, y)
            dF = dF * inv_b
        elif spec.beta == 0.0:
            value, dF = _fd_rows(F, snapshot_features)
            dF = dF * inv_b
        else:
            dr_v, dr_g = _dr_rows(F, cm, y)
            fd_v, fd_g = _fd_rows(F, snapshot_features)
            value = spec.beta * dr_v + (1.0 - spec.beta) * fd_v
            dF = (spec.beta * dr_g + (1.0 - spec.beta) * fd_g) * inv_b

    prox_value = 0.0
    if spec.regularizer == "prox":
        flat_local = model_mod.flatten(params)
        prox_value = prox_penalty(flat_local, prox_anchor, spec.mu)
        value += prox_value
    elif spec.regularizer in ("kd", "ntd", "ld"):
        rv, rG = _logit_reg_rows(spec, Z, snapshot_logits, y)
        value += spec.weight * rv
        reg_dz = (spec.weight * inv_b) * rG
        dZ = reg_dz if dZ is None else dZ + reg_dz

    if dZ is not None:
        dF = dF + k.matmul_nn(np.ascontiguousarray(dZ), cm.vectors)
    return BatchLoss(float(value), dF, dZ, prox_value)


def _ce_rows(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    log_p = _log_softmax_rows(Z)
    return -log_p[np.arange(Z.shape[0]), y]


def _dr_rows(F: np.ndarray, cm: ClassifierMatrix, y: np.ndarray):
    norms = np.linalg.norm(F, axis=1)
    if np.min(norms) < NORM_FLOOR:
        raise DegenerateVectorError("a feature in the batch has norm below 1e-12")
    vhat = cm.unit_rows()[y]            # (B, d)
    fhat = F / norms[:, None]
    c = np.clip(np.sum(fhat * vhat, axis=1), -1.0, 1.0)
    value = float(np.mean(0.5 * (c - 1.0) ** 2))
    grad = ((c - 1.0) / norms)[:, None] * (vhat - c[:, None] * fhat)
    return value, grad


def _fd_rows(F: np.ndarray, F_global: np.ndarray):
    diff = F - F_global
    d = F.shape[1]
    value = float(np.mean(np.sum(diff * diff, axis=1) / d))
    grad = (2.0 / d) * diff
    return value, grad


def _logit_reg_rows(spec: LossSpec, Z: np.ndarray, Z_global: np.ndarray, y: np.ndarray):
    B, C = Z.shape
    if spec.regularizer == "ld":
        diff = Z - Z_global
        value = float(np.mean(np.sum(diff * diff, axis=1) / C))
        return value, (2.0 / C) * diff
    if spec.regularizer == "ntd":
        if C <= 2:
            return 0.0, np.zeros_like(Z)
        keep = np.ones((B, C), dtype=bool)
        keep[np.arange(B), y] = False
        Zl = Z[keep].reshape(B, C - 1)
        Zg = Z_global[keep].reshape(B, C - 1)
        value, reduced = _kd_rows(Zl, Zg, spec.tau)
        grad = np.zeros_like(Z)
        grad[keep] = reduced.ravel()
        return value, grad
    return _kd_rows(Z, Z_global, spec.tau)


def _kd_rows(Zl: np.ndarray, Zg: np.ndarray, tau: float):
    log_ql = _log_softmax_rows(Zl / tau)
    log_qg = _log_softmax_rows(Zg / tau)
    qg = np.exp(log_qg)
    value = tau * tau * float(np.mean(np.sum(qg * (log_qg - log_ql), axis=1)))
    grad = tau * (np.exp(log_ql) - qg)
    return value, grad
