"""Diagnostics for local/global model behavior, and personalized fine-tuning.

Evaluation splits every test sample by whether its label was observed in a
client's training data.  Alignment is cos(f(x), v_y) against the normalized
true-class vector; accuracy is argmax over logits.  Feature dynamics track
how far a local model's features drifted from the broadcast global model's:
euclidean distance, angle, and norm difference, per class subset.

Samples whose feature norm falls below the degeneracy floor are skipped and
counted; a subset where nothing could be evaluated reports absent (None)
statistics rather than zeros.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datasets import TabularData
from .errors import ContractError, ParameterError
from .losses import GlobalSnapshot, LossSpec
from .model import ModelParams, forward_batch
from .numerics import NORM_FLOOR, RngStream
from .training import EpisodeOptions, run_episode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalArrays:
    """Per-sample evaluation of one model on one dataset."""

    features: np.ndarray   # (n, d)
    cos_true: np.ndarray   # (n,) cos(f, v_y); nan where degenerate
    correct: np.ndarray    # (n,) bool
    valid: np.ndarray      # (n,) bool, feature norm above the floor


def eval_arrays(params: ModelParams, X: np.ndarray, y: np.ndarray) -> EvalArrays:
    trace = forward_batch(params, X)
    F = trace.features
    norms = np.linalg.norm(F, axis=1)
    valid = norms >= NORM_FLOOR
    vhat = params.classifier.unit_rows()[y]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_true = np.clip(np.sum(F * vhat, axis=1) / norms, -1.0, 1.0)
    cos_true = np.where(valid, cos_true, np.nan)
    correct = np.argmax(trace.logits, axis=1) == y
    return EvalArrays(F, cos_true, correct, valid)


@dataclass(frozen=True)
class Fragment:
    """Alignment/accuracy means over one class subset of the eval split."""

    n: int
    skipped: int
    alignment: float | None
    accuracy: float | None


@dataclass(frozen=True)
class AlignmentReport:
    observed: Fragment
    unobserved: Fragment


def _fragment(arrays: EvalArrays, mask: np.ndarray) -> Fragment:
    n = int(np.sum(mask))
    usable = mask & arrays.valid
    skipped = n - int(np.sum(usable))
    if not np.any(usable):
        return Fragment(n, skipped, None, None)
    return Fragment(
        n,
        skipped,
        float(np.mean(arrays.cos_true[usable])),
        float(np.mean(arrays.correct[usable])),
    )


def alignment_and_accuracy(
    params: ModelParams, data: TabularData, observed: set
) -> AlignmentReport:
    """Mean alignment and accuracy on the observed- and unobserved-class
    portions of an evaluation split."""
    if data.n == 0:
        raise ParameterError("evaluation split is empty")
    arrays = eval_arrays(params, data.features, data.labels)
    obs_mask = np.isin(data.labels, sorted(observed))
    return AlignmentReport(
        observed=_fragment(arrays, obs_mask),
        unobserved=_fragment(arrays, ~obs_mask),
    )


@dataclass(frozen=True)
class GapReport:
    """Local minus global, per subset and statistic."""

    observed_alignment: float | None
    observed_accuracy: float | None
    unobserved_alignment: float | None
    unobserved_accuracy: float | None


def _gap(local: float | None, global_: float | None) -> float | None:
    if local is None or global_ is None:
        return None
    return local - global_


def gaps(local: AlignmentReport, global_: AlignmentReport) -> GapReport:
    """Change from the broadcast global model to a local model; both reports
    must cover the same evaluation split."""
    if (local.observed.n, local.unobserved.n) != (global_.observed.n, global_.unobserved.n):
        raise ContractError("alignment reports cover different evaluation splits")
    return GapReport(
        _gap(local.observed.alignment, global_.observed.alignment),
        _gap(local.observed.accuracy, global_.observed.accuracy),
        _gap(local.unobserved.alignment, global_.unobserved.alignment),
        _gap(local.unobserved.accuracy, global_.unobserved.accuracy),
    )


@dataclass(frozen=True)
class DynamicsFragment:
    """Feature drift statistics over one class subset."""

    n: int
    angle_skipped: int
    distance: float | None
    angle: float | None
    norm_diff: float | None


@dataclass(frozen=True)
class DynamicsReport:
    observed: DynamicsFragment
    unobserved: DynamicsFragment


def dynamics_from_features(
    F_local: np.ndarray, F_global: np.ndarray, labels: np.ndarray, observed: set
) -> DynamicsReport:
    """Distance, angle, and norm difference between local and global features,
    split by observed/unobserved label membership."""
    dist = np.linalg.norm(F_local - F_global, axis=1)
    n_local = np.linalg.norm(F_local, axis=1)
    n_global = np.linalg.norm(F_global, axis=1)
    norm_diff = n_local - n_global
    angle_valid = (n_local >= NORM_FLOOR) & (n_global >= NORM_FLOOR)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.clip(np.sum(F_local * F_global, axis=1) / (n_local * n_global), -1.0, 1.0)
    angle = np.arccos(np.where(angle_valid, cosang, 1.0))
    obs_mask = np.isin(labels, sorted(observed))

    def frag(mask: np.ndarray) -> DynamicsFragment:
        n = int(np.sum(mask))
        if n == 0:
            return DynamicsFragment(0, 0, None, None, None)
        amask = mask & angle_valid
        mean_angle = float(np.mean(angle[amask])) if np.any(amask) else None
        return DynamicsFragment(
            n,
            n - int(np.sum(amask)),
            float(np.mean(dist[mask])),
            mean_angle,
            float(np.mean(norm_diff[mask])),
        )

    return DynamicsReport(frag(obs_mask), frag(~obs_mask))


def feature_dynamics(
    local_params: ModelParams,
    global_params: ModelParams,
    data: TabularData,
    observed: set,
) -> DynamicsReport:
    F_local = forward_batch(local_params, data.features).features
    F_global = forward_batch(global_params, data.features).features
    return dynamics_from_features(F_local, F_global, data.labels, observed)


# ---------------------------------------------------------------------------
# per-round aggregation used by the engine


@dataclass(frozen=True)
class RoundDiagnostics:
    """Selected-client means of the alignment, gap, and dynamics statistics."""

    obs_alignment: float | None
    obs_accuracy: float | None
    unobs_alignment: float | None
    unobs_accuracy: float | None
    obs_alignment_gap: float | None
    obs_accuracy_gap: float | None
    unobs_alignment_gap: float | None
    unobs_accuracy_gap: float | None
    obs_distance: float | None
    obs_angle: float | None
    obs_norm_diff: float | None
    unobs_distance: float | None
    unobs_angle: float | None
    unobs_norm_diff: float | None


def _mean_or_none(values: list) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def round_diagnostics(
    locals_: list,
    broadcast: ModelParams,
    test: TabularData,
    observed_sets: list,
) -> RoundDiagnostics:
    """Evaluate every selected local model (and the broadcast global model)
    on the full test split and average the per-client statistics."""
    global_arrays = eval_arrays(broadcast, test.features, test.labels)
    acc = {name: [] for name in RoundDiagnostics.__dataclass_fields__}
    for cid, params in locals_:
        observed = observed_sets[cid]
        obs_mask = np.isin(test.labels, sorted(observed))
        local_arrays = eval_arrays(params, test.features, test.labels)
        local_rep = AlignmentReport(
            _fragment(local_arrays, obs_mask), _fragment(local_arrays, ~obs_mask)
        )
        global_rep = AlignmentReport(
            _fragment(global_arrays, obs_mask), _fragment(global_arrays, ~obs_mask)
        )
        gap = gaps(local_rep, global_rep)
        dyn = dynamics_from_features(
            local_arrays.features, global_arrays.features, test.labels, observed
        )
        acc["obs_alignment"].append(local_rep.observed.alignment)
        acc["obs_accuracy"].append(local_rep.observed.accuracy)
        acc["unobs_alignment"].append(local_rep.unobserved.alignment)
        acc["unobs_accuracy"].append(local_rep.unobserved.accuracy)
        acc["obs_alignment_gap"].append(gap.observed_alignment)
        acc["obs_accuracy_gap"].append(gap.observed_accuracy)
        acc["unobs_alignment_gap"].append(gap.unobserved_alignment)
        acc["unobs_accuracy_gap"].append(gap.unobserved_accuracy)
        acc["obs_distance"].append(dyn.observed.distance)
        acc["obs_angle"].append(dyn.observed.angle)
        acc["obs_norm_diff"].append(dyn.observed.norm_diff)
        acc["unobs_distance"].append(dyn.unobserved.distance)
        acc["unobs_angle"].append(dyn.unobserved.angle)
        acc["unobs_norm_diff"].append(dyn.unobserved.norm_diff)
    return RoundDiagnostics(**{name: _mean_or_none(vals) for name, vals in acc.items()})


# ---------------------------------------------------------------------------
# personalized fine-tuning


@dataclass(frozen=True)
class FineTuneConfig:
    """Two-step personalization: fine-tune the trained global model on each
    client's data with a constant learning rate."""

    lr: float
    loss: LossSpec = LossSpec(base="dr")
    epochs: int = 5
    batch_size: int = 50
    momentum: float = 0.9
    weight_decay: float = 1e-5
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0:
            raise ParameterError("fine-tuning lr must be >= 0")
        if self.epochs < 0:
            raise ParameterError("fine-tuning epochs must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "loss": self.loss.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FineTuneConfig":
        d = dict(d)
        d["loss"] = LossSpec.from_dict(d["loss"])
        return cls(**d)


def fine_tune(
    global_params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    ft: FineTuneConfig,
    stream: RngStream,
) -> ModelParams:
    """Personalize the global model on one client's training data.

    The feature-distillation anchor, when the fine-tuning loss uses one, is
    the pre-fine-tuning global model.  Zero epochs (or lr == 0) return an
    untouched copy.
    """
    ft.validate()
    if ft.epochs == 0 or ft.lr == 0.0:
        return global_params.clone()
    opts = EpisodeOptions(
        loss=ft.loss,
        epochs=ft.epochs,
        batch_size=ft.batch_size,
        lr=ft.lr,
        momentum=ft.momentum,
        weight_decay=ft.weight_decay,
    )
    snapshot = GlobalSnapshot(global_params) if ft.loss.needs_snapshot() else None
    return run_episode(global_params, X, y, opts, snapshot, stream)


@dataclass(frozen=True)
class PersonalizationReport:
    """Per-client personalized accuracy with its mean and (population)
    standard deviation across clients."""

    client_ids: tuple
    accuracies: tuple
    mean: float
    std: float
    skipped: tuple  # clients without train or test data


def personalization_sweep(
    global_params: ModelParams,
    train: TabularData,
    test: TabularData,
    train_partition,
    test_partition,
    ft: FineTuneConfig,
) -> PersonalizationReport:
    """Fine-tune and evaluate every client on its own test split."""
    ft.validate()
    if test_partition is None:
        raise ParameterError("personalization needs a per-client test partition")
    root = RngStream(ft.seed).child("finetune")
    ids = []
    accs = []
    skipped = []
    for cid in range(train_partition.n_clients):
        train_idx = np.asarray(train_partition.assignments[cid], dtype=np.int64)
        test_idx = np.asarray(test_partition.assignments[cid], dtype=np.int64)
        if train_idx.size == 0 or test_idx.size == 0:
            skipped.append(cid)
            logger.warning("client %d skipped in personalization (empty split)", cid)
            continue
        personalized = fine_tune(
            global_params,
            train.features[train_idx],
            train.labels[train_idx],
            ft,
            root.child("client", cid),
        )
        logits = forward_batch(personalized, test.features[test_idx]).logits
        pred = np.argmax(logits, axis=1)
        accs.append(float(np.mean(pred == test.labels[test_idx])))
        ids.append(cid)
    if not accs:
        raise ParameterError("no client had both train and test data")
    return PersonalizationReport(
        tuple(ids),
        tuple(accs),
        float(np.mean(accs)),
        float(np.std(accs)),
        tuple(skipped),
    )
