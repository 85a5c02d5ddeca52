"""Exception hierarchy.

Validation problems (bad shapes, bad parameters, malformed files) derive
from ValueError so the CLI can map them to exit code 1; broken internal
contracts derive from RuntimeError and map to exit code 2.
"""


class DimensionError(ValueError):
    """Input shapes or lengths do not match what the operation requires."""


class ParameterError(ValueError):
    """A scalar argument is outside its legal range."""


class DegenerateVectorError(ValueError):
    """A vector norm fell below the 1e-12 floor where a direction is needed."""


class PartitionError(ValueError):
    """A dataset cannot be split as requested (e.g. indivisible shard sizes)."""


class DataError(ValueError):
    """A dataset file is malformed or fails validation."""


class ConfigError(ValueError):
    """An experiment configuration is inconsistent or incomplete."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable, truncated, or of the wrong version."""


class ContractError(RuntimeError):
    """An internal invariant was violated (mismatched traces, mutated frozen
    classifier, reports over different evaluation splits)."""
