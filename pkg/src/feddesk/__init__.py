"""feddesk: a deterministic desk-scale federated learning simulator.

Implements the FedAvg pipeline with a frozen simplex-ETF (or random, or
trainable) classifier, dot-regression and feature-distillation local
objectives, the classic distillation/proximal regularizers, non-iid
sharding and Dirichlet partitioners, observed/unobserved-class diagnostics,
and two-step personalized fine-tuning.

Hot kernels run in a compiled Cython core when available, with a numpy
fallback selected at import (see feddesk.backend).
"""

__version__ = "0.1.0"

from .backend import backend_name
from .classifier import ClassifierMatrix, build_etf, build_random_frozen, build_trainable
from .engine import FedDataset, FLConfig, RunResult, run
from .losses import GlobalSnapshot, LossSpec
from .model import ModelParams, forward, init_mlp
from .numerics import RngStream
from .partition import Partition, lda_partition, shard_partition

__all__ = [
    "__version__",
    "backend_name",
    "ClassifierMatrix",
    "build_etf",
    "build_random_frozen",
    "build_trainable",
    "FedDataset",
    "FLConfig",
    "RunResult",
    "run",
    "GlobalSnapshot",
    "LossSpec",
    "ModelParams",
    "forward",
    "init_mlp",
    "RngStream",
    "Partition",
    "lda_partition",
    "shard_partition",
]
