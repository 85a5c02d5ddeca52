"""FedAvg orchestration: client sampling, broadcast, local training,
weighted aggregation, learning-rate schedule, and per-round metrics.

Every source of randomness is derived from the run seed through labeled
RNG streams, so a run is a pure function of its configuration: client
sampling uses the ("sample", round) stream and client i's episode in round
r uses the ("round", r) -> ("client", i) stream.  Client episodes are
independent and may run on worker threads; locals are always aggregated in
ascending client-id order, so the result does not depend on worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .classifier import build_etf, build_random_frozen, build_trainable
from .datasets import TabularData
from .errors import ContractError, DimensionError, ParameterError
from .losses import GlobalSnapshot, LossSpec
from .model import ModelParams, forward_batch, init_mlp
from .numerics import RngStream
from .partition import Partition, partition_stats
from .training import EpisodeOptions, run_episode

logger = logging.getLogger(__name__)

CLASSIFIER_KINDS = ("etf", "random", "trainable")


@dataclass(frozen=True)
class FLConfig:
    """Federated training configuration.

    Defaults follow the momentum-SGD setup used throughout: batch size 50,
    momentum 0.9, weight decay 1e-5, 320 rounds with 10% participation, and
    the learning rate decayed by 0.1 at rounds 160 and 240.
    """

    n_clients: int
    rounds: int = 320
    participation: float = 0.1
    local_epochs: int = 3
    batch_size: int = 50
    lr: float = 0.35
    momentum: float = 0.9
    weight_decay: float = 1e-5
    lr_milestones: tuple = (160, 240)
    lr_decay: float = 0.1
    loss: LossSpec = field(default_factory=lambda: LossSpec(base="drplus", beta=0.9))
    classifier_kind: str = "etf"
    hidden_sizes: tuple = (64,)
    feature_dim: int = 32
    seed: int = 0
    eval_cadence: int = 1
    diag_cadence: int = 8
    observed_threshold: int = 1  # min training samples for a class to count as observed
    workers: int = 1

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ParameterError("n_clients must be >= 1")
        if self.rounds < 0:
            raise ParameterError("rounds must be >= 0")
        if not 0.0 < self.participation <= 1.0:
            raise ParameterError("participation must lie in (0, 1]")
        if self.local_epochs < 1:
            raise ParameterError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ParameterError("lr must be positive")
        if self.lr_decay <= 0:
            raise ParameterError("lr_decay must be positive")
        ms = self.lr_milestones
        if any(m2 <= m1 for m1, m2 in zip(ms, ms[1:])):
            raise ParameterError("lr_milestones must be strictly increasing")
        if any(m < 0 or m >= self.rounds for m in ms) and self.rounds > 0:
            raise ParameterError("lr_milestones must lie in [0, rounds)")
        if self.classifier_kind not in CLASSIFIER_KINDS:
            raise ParameterError(f"unknown classifier kind {self.classifier_kind!r}")
        if self.loss.base in ("dr", "drplus") and self.classifier_kind == "trainable":
            raise ParameterError(
                "dot-regression losses require a frozen classifier (etf or random)"
            )
        if self.eval_cadence < 1 or self.diag_cadence < 1:
            raise ParameterError("cadences must be >= 1")
        if self.observed_threshold < 1:
            raise ParameterError("observed_threshold must be >= 1")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_clients": self.n_clients,
            "rounds": self.rounds,
            "participation": self.participation,
            "local_epochs": self.local_epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "lr_milestones": list(self.lr_milestones),
            "lr_decay": self.lr_decay,
            "loss": self.loss.to_dict(),
            "classifier_kind": self.classifier_kind,
            "hidden_sizes": list(self.hidden_sizes),
            "feature_dim": self.feature_dim,
            "seed": self.seed,
            "eval_cadence": self.eval_cadence,
            "diag_cadence": self.diag_cadence,
            "observed_threshold": self.observed_threshold,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FLConfig":
        d = dict(d)
        d["loss"] = LossSpec.from_dict(d["loss"])
        d["lr_milestones"] = tuple(d["lr_milestones"])
        d["hidden_sizes"] = tuple(d["hidden_sizes"])
        return cls(**d)


@dataclass(frozen=True)
class FedDataset:
    """Train/test splits plus their client partitions."""

    train: TabularData
    test: TabularData
    train_partition: Partition
    test_partition: Partition | None = None

    @property
    def n_classes(self) -> int:
        return max(self.train.n_classes, self.test.n_classes)


@dataclass(frozen=True)
class RoundRecord:
    """Metrics captured after one communication round."""

    round: int
    lr: float
    selected: tuple
    n_samples: int
    accuracy: float | None
    diagnostics: "analysis.RoundDiagnostics | None"


@dataclass
class RunResult:
    records: list
    final: ModelParams
    initial: ModelParams
    checkpoints: dict  # rounds completed -> ModelParams


def sample_clients(round_idx: int, n_clients: int, ratio: float, rng: RngStream) -> tuple:
    """Uniform without-replacement draw, |S| = max(1, round(ratio * N)),
    deterministic in (seed, round); returned sorted ascending."""
    size = max(1, int(np.floor(ratio * n_clients + 0.5)))
    size = min(size, n_clients)
    gen = rng.child("sample", round_idx).generator()
    chosen = gen.choice(n_clients, size=size, replace=False)
    return tuple(int(c) for c in np.sort(chosen))


def lr_at(round_idx: int, cfg: FLConfig) -> float:
    """Initial lr decayed once per milestone that has been reached."""
    decays = sum(1 for m in cfg.lr_milestones if m <= round_idx)
    return cfg.lr * cfg.lr_decay**decays


def episode_stream(seed: int, round_idx: int, client_id: int) -> RngStream:
    """The RNG stream a client's local episode consumes in a given round."""
    return RngStream(seed).child("round", round_idx).child("client", client_id)


def local_train(
    global_params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    opts: EpisodeOptions,
    snapshot: GlobalSnapshot | None,
    stream: RngStream,
) -> tuple[ModelParams, int]:
    """One client's episode; returns the trained copy and its sample count."""
    if X.shape[0] == 0:
        raise ParameterError("client dataset is empty")
    return run_episode(global_params, X, y, opts, snapshot, stream), X.shape[0]


def aggregation_weights(counts) -> np.ndarray:
    """Importance weights w_i = n_i / sum_j n_j; they sum to 1 to roundoff."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts <= 0):
        raise ParameterError("sample counts must be positive")
    return counts / np.sum(counts)


def aggregate(locals_: list) -> ModelParams:
    """Sample-count-weighted average of local models.

    Computed as ref + sum_i w_i (theta_i - ref) around the first local, in
    the given (ascending client id) order; identical locals therefore
    aggregate to themselves bit-for-bit.  A frozen classifier must be
    bit-identical across locals and passes through; a trainable one is
    averaged like the extractor.
    """
    if not locals_:
        raise ParameterError("aggregate needs at least one local model")
    weights = aggregation_weights([n for _, n in locals_])
    ref, _ = locals_[0]
    shapes = [w.shape for w in ref.weights]
    for other, _ in locals_[1:]:
        if [w.shape for w in other.weights] != shapes:
            raise DimensionError("local models disagree on layer shapes")
        if ref.classifier.frozen:
            if not np.array_equal(other.classifier.vectors, ref.classifier.vectors):
                raise ContractError("frozen classifiers diverged across clients")
    out = ref.clone()
    for arrays in ("weights", "biases"):
        ref_arrays = getattr(ref, arrays)
        out_arrays = getattr(out, arrays)
        for idx in range(len(ref_arrays)):
            acc = out_arrays[idx]
            for (params, _), w in zip(locals_[1:], weights[1:]):
                acc += w * (getattr(params, arrays)[idx] - ref_arrays[idx])
    if not ref.classifier.frozen:
        acc = out.classifier.vectors
        for (params, _), w in zip(locals_[1:], weights[1:]):
            acc += w * (params.classifier.vectors - ref.classifier.vectors)
    return out


def build_model(cfg: FLConfig, input_dim: int, n_classes: int) -> ModelParams:
    """Classifier and He-initialized extractor from the run seed."""
    root = RngStream(cfg.seed)
    if cfg.classifier_kind == "etf":
        cm = build_etf(cfg.feature_dim, n_classes, root.child("classifier"))
    elif cfg.classifier_kind == "random":
        cm = build_random_frozen(cfg.feature_dim, n_classes, root.child("classifier"))
    else:
        cm = build_trainable(cfg.feature_dim, n_classes, root.child("classifier"))
    sizes = (input_dim, *cfg.hidden_sizes, cfg.feature_dim)
    return init_mlp(sizes, cm, root.child("init"))


def evaluate_accuracy(params: ModelParams, data: TabularData) -> float:
    """argmax-logit accuracy over a dataset."""
    if data.n == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    logits = forward_batch(params, data.features).logits
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == data.labels))


def run(cfg: FLConfig, data: FedDataset, initial: ModelParams | None = None) -> RunResult:
    """Execute the full federated pipeline: R rounds of sample -> broadcast
    -> local train -> aggregate, with metrics at the configured cadences."""
    cfg.validate()
    n_classes = data.n_classes
    stats = partition_stats(data.train_partition, data.train.labels, n_classes)
    observed = [
        {c for c, h in enumerate(client.histogram) if h >= cfg.observed_threshold}
        for client in stats.clients
    ]
    if initial is None:
        initial = build_model(cfg, data.train.dim, n_classes)
    global_params = initial.clone()
    root = RngStream(cfg.seed)
    records = []
    checkpoints = {}
    client_data = [
        (data.train.features[np.asarray(idx, dtype=np.int64)], data.train.labels[np.asarray(idx, dtype=np.int64)])
        for idx in data.train_partition.assignments
    ]

    for round_idx in range(cfg.rounds):
        lr = lr_at(round_idx, cfg)
        opts = EpisodeOptions(
            loss=cfg.loss,
            epochs=cfg.local_epochs,
            batch_size=cfg.batch_size,
            lr=lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
        )
        selected = sample_clients(round_idx, cfg.n_clients, cfg.participation, root)
        snapshot = GlobalSnapshot(global_params)
        jobs = []
        for cid in selected:
            X, y = client_data[cid]
            if X.shape[0] == 0:
                logger.warning("round %d: client %d has no data, skipped", round_idx, cid)
                continue
            jobs.append((cid, X, y))
        if not jobs:
            raise ContractError(f"round {round_idx}: every selected client was empty")

        def _episode(job):
            cid, X, y = job
            stream = episode_stream(cfg.seed, round_idx, cid)
            params = run_episode(global_params, X, y, opts, snapshot, stream)
            return cid, params, X.shape[0]

        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_episode, jobs))
        else:
            results = [_episode(job) for job in jobs]
        results.sort(key=lambda item: item[0])
        locals_ = [(params, n) for _, params, n in results]
        new_global = aggregate(locals_)

        accuracy = None
        if (round_idx + 1) % cfg.eval_cadence == 0 or round_idx == cfg.rounds - 1:
            accuracy = evaluate_accuracy(new_global, data.test)
        diagnostics = None
        if (round_idx + 1) % cfg.diag_cadence == 0 or round_idx == cfg.rounds - 1:
            diagnostics = analysis.round_diagnostics(
                [(cid, params) for cid, params, _ in results],
                snapshot.params,
                data.test,
                observed,
            )
        records.append(
            RoundRecord(
                round=round_idx,
                lr=lr,
                selected=selected,
                n_samples=sum(n for _, n in locals_),
                accuracy=accuracy,
                diagnostics=diagnostics,
            )
        )
        global_params = new_global
        completed = round_idx + 1
        if completed in cfg.lr_milestones or completed == cfg.rounds:
            checkpoints[completed] = global_params.clone()

    return RunResult(records, global_params, initial, checkpoints)
