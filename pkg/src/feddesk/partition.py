"""Non-iid client splits: label sharding and Dirichlet (LDA) allocation.

Sharding slices label-sorted data into equal same-class shards and deals s
shards to each client, so a client sees at most s distinct classes.  LDA
draws, per class, a Dirichlet(alpha) proportion vector over clients and
allocates that class's samples accordingly, with largest-remainder rounding
so every sample is assigned exactly once.

Test-set partitions mirror the training partition: sharding deals each
client test shards of the same classes it trains on; LDA samples test
indices to match each client's training class frequencies.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError, PartitionError
from .numerics import RngStream, dirichlet


@dataclass(frozen=True)
class Partition:
    """Disjoint per-client index lists into a dataset."""

    n_clients: int
    assignments: tuple  # tuple of sorted tuples of int
    strategy: str       # "shard" or "lda"
    param: float        # shards per client, or alpha
    seed: int

    def __len__(self) -> int:
        return self.n_clients

    def sizes(self) -> tuple:
        return tuple(len(a) for a in self.assignments)

    def total(self) -> int:
        return sum(self.sizes())


def _as_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.size == 0:
        raise ParameterError("labels must be a non-empty 1-D sequence")
    return arr.astype(np.int64)


def _class_indices(labels: np.ndarray) -> dict:
    """Original-order index lists per class, ascending class id."""
    out = {}
    for c in sorted(set(labels.tolist())):
        out[c] = np.flatnonzero(labels == c)
    return out


def shard_partition(labels, n_clients: int, shards_per_client: int, rng: RngStream) -> Partition:
    """Deal n_clients * s equal same-class shards, s per client."""
    labels = _as_labels(labels)
    if n_clients < 1 or shards_per_client < 1:
        raise ParameterError("n_clients and shards_per_client must be >= 1")
    n_shards = n_clients * shards_per_client
    n_total = labels.shape[0]
    if n_total % n_shards != 0:
        raise PartitionError(
            f"{n_total} samples do not divide into {n_shards} shards "
            f"(remainder {n_total % n_shards})"
        )
    shard_size = n_total // n_shards
    by_class = _class_indices(labels)
    shards = []
    for c, idx in by_class.items():
        if idx.shape[0] % shard_size != 0:
            raise PartitionError(
                f"class {c} has {idx.shape[0]} samples, not divisible by shard "
                f"size {shard_size} (remainder {idx.shape[0] % shard_size})"
            )
        for start in range(0, idx.shape[0], shard_size):
            shards.append(idx[start : start + shard_size])
    gen = rng.generator()
    order = gen.permutation(len(shards))
    assignments = []
    for k in range(n_clients):
        mine = order[k * shards_per_client : (k + 1) * shards_per_client]
        merged = np.concatenate([shards[s] for s in mine])
        assignments.append(tuple(int(i) for i in np.sort(merged)))
    return Partition(n_clients, tuple(assignments), "shard", float(shards_per_client), rng.root_seed)


def lda_partition(labels, n_clients: int, alpha: float, rng: RngStream) -> Partition:
    """Allocate each class by a Dirichlet(alpha) proportion vector over clients.

    Per-class targets p * n_c are rounded by largest remainder (ties go to
    the lower client id), so the class and total counts are conserved
    exactly.
    """
    labels = _as_labels(labels)
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if n_clients < 1:
        raise ParameterError("n_clients must be >= 1")
    by_class = _class_indices(labels)
    buckets = [[] for _ in range(n_clients)]
    for c, idx in by_class.items():
        gen = rng.child("class_pool", c).generator()
        pool = idx[gen.permutation(idx.shape[0])]
        p = dirichlet(alpha, n_clients, rng.child("class_props", c))
        counts = _largest_remainder(p * idx.shape[0], idx.shape[0])
        start = 0
        for k in range(n_clients):
            buckets[k].append(pool[start : start + counts[k]])
            start += counts[k]
    assignments = tuple(
        tuple(int(i) for i in np.sort(np.concatenate(b))) if any(len(x) for x in b) else ()
        for b in buckets
    )
    return Partition(n_clients, assignments, "lda", float(alpha), rng.root_seed)


def _largest_remainder(targets: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to total, closest to the fractional targets."""
    base = np.floor(targets).astype(np.int64)
    short = total - int(np.sum(base))
    if short > 0:
        remainders = targets - base
        # stable argsort descending: ties resolved toward lower index
        order = np.argsort(-remainders, kind="stable")
        base[order[:short]] += 1
    return base


def matching_shard_test_partition(
    train: Partition, train_labels, test_labels, rng: RngStream
) -> Partition:
    """Shard the test set and deal each client shards of its training classes."""
    train_labels = _as_labels(train_labels)
    test_labels = _as_labels(test_labels)
    s = int(train.param)
    n_shards = train.n_clients * s
    if test_labels.shape[0] % n_shards != 0:
        raise PartitionError(
            f"{test_labels.shape[0]} test samples do not divide into {n_shards} shards "
            f"(remainder {test_labels.shape[0] % n_shards})"
        )
    shard_size = test_labels.shape[0] // n_shards
    by_class = _class_indices(test_labels)
    shard_pools = {}
    for c, idx in by_class.items():
        if idx.shape[0] % shard_size != 0:
            raise PartitionError(
                f"test class {c} has {idx.shape[0]} samples, not divisible by "
                f"shard size {shard_size}"
            )
        gen = rng.child("test_shards", c).generator()
        pool = idx[gen.permutation(idx.shape[0])]
        shard_pools[c] = [pool[i : i + shard_size] for i in range(0, len(pool), shard_size)]
    # each client takes as many test shards of class c as it holds train shards
    train_shard_size = train_labels.shape[0] // n_shards
    assignments = []
    for k in range(train.n_clients):
        counts = Counter(int(train_labels[i]) for i in train.assignments[k])
        mine = []
        for c, cnt in sorted(counts.items()):
            n_take = cnt // train_shard_size
            if cnt % train_shard_size != 0:
                raise PartitionError(
                    f"client {k} holds {cnt} train samples of class {c}, not a "
                    f"whole number of shards"
                )
            if len(shard_pools.get(c, [])) < n_take:
                raise PartitionError(
                    f"test set has too few class-{c} shards to mirror client {k}"
                )
            for _ in range(n_take):
                mine.append(shard_pools[c].pop())
        merged = np.concatenate(mine) if mine else np.array([], dtype=np.int64)
        assignments.append(tuple(int(i) for i in np.sort(merged)))
    return Partition(train.n_clients, tuple(assignments), "shard", train.param, rng.root_seed)


def matching_lda_test_partition(
    train: Partition, train_labels, test_labels, rng: RngStream
) -> Partition:
    """Allocate test samples proportionally to each client's train class counts."""
    train_labels = _as_labels(train_labels)
    test_labels = _as_labels(test_labels)
    by_class = _class_indices(test_labels)
    train_hist = np.zeros((train.n_clients, int(np.max(train_labels)) + 1))
    for k, idx in enumerate(train.assignments):
        for i in idx:
            train_hist[k, train_labels[i]] += 1
    buckets = [[] for _ in range(train.n_clients)]
    for c, idx in by_class.items():
        gen = rng.child("test_pool", c).generator()
        pool = idx[gen.permutation(idx.shape[0])]
        col = train_hist[:, c] if c < train_hist.shape[1] else np.zeros(train.n_clients)
        total_train = float(np.sum(col))
        if total_train == 0:
            # class absent from every client's training data: spread evenly
            p = np.full(train.n_clients, 1.0 / train.n_clients)
        else:
            p = col / total_train
        counts = _largest_remainder(p * idx.shape[0], idx.shape[0])
        start = 0
        for k in range(train.n_clients):
            buckets[k].append(pool[start : start + counts[k]])
            start += counts[k]
    assignments = tuple(
        tuple(int(i) for i in np.sort(np.concatenate(b))) if any(len(x) for x in b) else ()
        for b in buckets
    )
    return Partition(train.n_clients, assignments, "lda", train.param, rng.root_seed)


# ---------------------------------------------------------------------------
# statistics and serialization


@dataclass(frozen=True)
class ClientStats:
    """Per-client label profile of a partition."""

    n_samples: int
    histogram: tuple          # count per class id 0..C-1
    entropy: float            # natural-log label entropy
    observed: tuple           # classes with >= 1 sample, ascending
    unobserved: tuple         # complement in [0, C)


@dataclass(frozen=True)
class PartitionStats:
    n_classes: int
    clients: tuple


def partition_stats(part: Partition, labels, n_classes: int | None = None) -> PartitionStats:
    """Class histograms, label entropy, and observed/unobserved class sets."""
    labels = _as_labels(labels)
    if n_classes is None:
        n_classes = int(np.max(labels)) + 1
    clients = []
    all_classes = set(range(n_classes))
    for idx in part.assignments:
        hist = np.zeros(n_classes, dtype=np.int64)
        for i in idx:
            hist[labels[i]] += 1
        n = int(np.sum(hist))
        if n > 0:
            p = hist[hist > 0] / n
            entropy = float(-np.sum(p * np.log(p)))
        else:
            entropy = 0.0
        observed = tuple(int(c) for c in np.flatnonzero(hist))
        unobserved = tuple(sorted(all_classes - set(observed)))
        clients.append(ClientStats(n, tuple(int(h) for h in hist), entropy, observed, unobserved))
    return PartitionStats(n_classes, tuple(clients))


def save_partition(part: Partition, path) -> None:
    payload = {
        "format_version": 1,
        "n_clients": part.n_clients,
        "strategy": part.strategy,
        "param": part.param,
        "seed": part.seed,
        "assignments": [list(a) for a in part.assignments],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_partition(path) -> Partition:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"not a valid partition file: {path} ({exc})") from exc
    try:
        return Partition(
            int(payload["n_clients"]),
            tuple(tuple(int(i) for i in a) for a in payload["assignments"]),
            str(payload["strategy"]),
            float(payload["param"]),
            int(payload["seed"]),
        )
    except KeyError as exc:
        raise DataError(f"partition file {path} is missing field {exc}") from exc


def check_disjoint_cover(part: Partition, n_total: int) -> None:
    """Raise PartitionError unless assignments are disjoint and cover [0, n)."""
    seen = np.zeros(n_total, dtype=bool)
    for k, idx in enumerate(part.assignments):
        for i in idx:
            if i < 0 or i >= n_total:
                raise PartitionError(f"client {k} holds out-of-range index {i}")
            if seen[i]:
                raise PartitionError(f"index {i} assigned to more than one client")
            seen[i] = True
    missing = int(n_total - np.sum(seen))
    if missing:
        raise PartitionError(f"{missing} indices are not assigned to any client")
