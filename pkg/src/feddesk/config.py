"""Experiment configuration: one JSON document describing the data source,
partitioning, federated training, and optional fine-tuning stage.

The config file is authoritative; CLI flags override individual fields.
Round-tripping through to_dict/from_dict is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .analysis import FineTuneConfig
from .datasets import SyntheticSpec, TabularData, generate_synthetic, load_tabular
from .engine import FedDataset, FLConfig
from .errors import ConfigError
from .numerics import RngStream
from .partition import (
    Partition,
    lda_partition,
    matching_lda_test_partition,
    matching_shard_test_partition,
    shard_partition,
)


@dataclass(frozen=True)
class PartitionSpec:
    """How client splits are produced: label shards or Dirichlet allocation."""

    strategy: str = "shard"
    shards_per_client: int = 2
    alpha: float = 0.5

    def __post_init__(self):
        if self.strategy not in ("shard", "lda"):
            raise ConfigError(f"unknown partition strategy {self.strategy!r}")
        if self.shards_per_client < 1:
            raise ConfigError("shards_per_client must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "shards_per_client": self.shards_per_client,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSpec":
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a reproducible run needs."""

    data: SyntheticSpec | str  # synthetic spec, or a path to a labeled CSV
    partition: PartitionSpec
    fl: FLConfig
    finetune: FineTuneConfig | None = None
    output_dir: str = "results"
    seed: int = 0  # drives partitioning (components carry their own seeds)

    def to_dict(self) -> dict:
        if isinstance(self.data, SyntheticSpec):
            data = {"synthetic": self.data.to_dict()}
        else:
            data = {"path": self.data}
        return {
            "data": data,
            "partition": self.partition.to_dict(),
            "fl": self.fl.to_dict(),
            "finetune": None if self.finetune is None else self.finetune.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            data_field = d["data"]
            if "synthetic" in data_field:
                data = SyntheticSpec.from_dict(data_field["synthetic"])
            elif "path" in data_field:
                data = str(data_field["path"])
            else:
                raise ConfigError("data must specify 'synthetic' or 'path'")
            return cls(
                data=data,
                partition=PartitionSpec.from_dict(d["partition"]),
                fl=FLConfig.from_dict(d["fl"]),
                finetune=(
                    None if d.get("finetune") is None else FineTuneConfig.from_dict(d["finetune"])
                ),
                output_dir=str(d.get("output_dir", "results")),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed experiment config: {exc}") from exc


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def load_data(cfg: ExperimentConfig) -> tuple[TabularData, TabularData]:
    """Materialize the (train, test) splits the config describes."""
    if isinstance(cfg.data, SyntheticSpec):
        return generate_synthetic(cfg.data)
    data, _ = load_tabular(cfg.data)
    # an on-disk dataset is split 80/20 by stratified position, like the
    # synthetic generator
    train_idx, test_idx = [], []
    labels = data.labels
    for c in range(data.n_classes):
        idx = np.flatnonzero(labels == c)
        n_train = int(round(0.8 * idx.shape[0]))
        train_idx.extend(idx[:n_train].tolist())
        test_idx.extend(idx[n_train:].tolist())
    return data.subset(train_idx), data.subset(test_idx)


def build_partitions(
    cfg: ExperimentConfig, train: TabularData, test: TabularData
) -> tuple[Partition, Partition]:
    """Train partition plus the mirrored per-client test partition."""
    rng = RngStream(cfg.seed).child("partition")
    test_rng = RngStream(cfg.seed).child("test_partition")
    n = cfg.fl.n_clients
    if cfg.partition.strategy == "shard":
        train_part = shard_partition(train.labels, n, cfg.partition.shards_per_client, rng)
        test_part = matching_shard_test_partition(train_part, train.labels, test.labels, test_rng)
    else:
        train_part = lda_partition(train.labels, n, cfg.partition.alpha, rng)
        test_part = matching_lda_test_partition(train_part, train.labels, test.labels, test_rng)
    return train_part, test_part


def prepare(cfg: ExperimentConfig) -> FedDataset:
    """Data + partitions, ready for the engine."""
    train, test = load_data(cfg)
    train_part, test_part = build_partitions(cfg, train, test)
    return FedDataset(train, test, train_part, test_part)


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    """Replace nested fields addressed as e.g. fl_lr, finetune_epochs."""
    top = {}
    fl = {}
    ft = {}
    for key, value in kwargs.items():
        if value is None:
            continue
        if key.startswith("fl_"):
            fl[key[3:]] = value
        elif key.startswith("finetune_"):
            ft[key[9:]] = value
        else:
            top[key] = value
    if fl:
        top["fl"] = replace(cfg.fl, **fl)
    if ft:
        if cfg.finetune is None:
            raise ConfigError("cannot override finetune fields: config has no finetune block")
        top["finetune"] = replace(cfg.finetune, **ft)
    return replace(cfg, **top) if top else cfg
