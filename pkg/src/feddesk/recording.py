"""Result emission and model checkpointing.

results.csv is a wide table with one row per round per metric group; values
are printed with repr so parsing them back is lossless.  Checkpoints are
versioned JSON containers whose floats round-trip bit-exactly (json uses
the shortest representation that reproduces the double).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .classifier import ClassifierMatrix
from .errors import CheckpointError
from .model import ModelParams

RESULT_COLUMNS = (
    "round",
    "group",
    "lr",
    "n_selected",
    "n_samples",
    "accuracy",
    "obs_alignment",
    "obs_accuracy",
    "unobs_alignment",
    "unobs_accuracy",
    "obs_alignment_gap",
    "obs_accuracy_gap",
    "unobs_alignment_gap",
    "unobs_accuracy_gap",
    "obs_distance",
    "obs_angle",
    "obs_norm_diff",
    "unobs_distance",
    "unobs_angle",
    "unobs_norm_diff",
)

_ALIGNMENT_FIELDS = (
    "obs_alignment",
    "obs_accuracy",
    "unobs_alignment",
    "unobs_accuracy",
    "obs_alignment_gap",
    "obs_accuracy_gap",
    "unobs_alignment_gap",
    "unobs_accuracy_gap",
)

_DYNAMICS_FIELDS = (
    "obs_distance",
    "obs_angle",
    "obs_norm_diff",
    "unobs_distance",
    "unobs_angle",
    "unobs_norm_diff",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(records, path) -> None:
    """One 'global' row per round, plus 'alignment' and 'dynamics' rows on
    the rounds where diagnostics were collected."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for rec in records:
            base = {
                "round": rec.round,
                "group": "global",
                "lr": rec.lr,
                "n_selected": len(rec.selected),
                "n_samples": rec.n_samples,
                "accuracy": rec.accuracy,
            }
            writer.writerow([_fmt(base.get(col)) for col in RESULT_COLUMNS])
            if rec.diagnostics is None:
                continue
            diag = rec.diagnostics
            align = {"round": rec.round, "group": "alignment"}
            align.update({f: getattr(diag, f) for f in _ALIGNMENT_FIELDS})
            writer.writerow([_fmt(align.get(col)) for col in RESULT_COLUMNS])
            dyn = {"round": rec.round, "group": "dynamics"}
            dyn.update({f: getattr(diag, f) for f in _DYNAMICS_FIELDS})
            writer.writerow([_fmt(dyn.get(col)) for col in RESULT_COLUMNS])


@dataclass(frozen=True)
class ResultRow:
    round: int
    group: str
    values: dict  # column -> float, absent columns omitted


def load_results(path):
    """Parse a results.csv back into typed rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RESULT_COLUMNS:
            raise CheckpointError(f"{path}: unexpected results schema {reader.fieldnames}")
        for raw in reader:
            values = {}
            for col in RESULT_COLUMNS[2:]:
                if raw[col] != "":
                    values[col] = float(raw[col])
            rows.append(ResultRow(int(raw["round"]), raw["group"], values))
    return rows


CHECKPOINT_VERSION = 1


def checkpoint(params: ModelParams, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "classifier": {
            "kind": params.classifier.kind,
            "frozen": params.classifier.frozen,
            "shape": list(params.classifier.vectors.shape),
            "vectors": params.classifier.vectors.ravel().tolist(),
        },
        "layers": [
            {
                "shape": list(w.shape),
                "weights": w.ravel().tolist(),
                "bias": b.tolist(),
            }
            for w, b in zip(params.weights, params.biases)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def restore(path) -> ModelParams:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version!r} not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        cls_info = payload["classifier"]
        vectors = np.asarray(cls_info["vectors"], dtype=np.float64).reshape(cls_info["shape"])
        cm = ClassifierMatrix(
            np.ascontiguousarray(vectors), cls_info["kind"], bool(cls_info["frozen"])
        )
        weights = []
        biases = []
        for layer in payload["layers"]:
            w = np.asarray(layer["weights"], dtype=np.float64).reshape(layer["shape"])
            weights.append(np.ascontiguousarray(w))
            biases.append(np.asarray(layer["bias"], dtype=np.float64))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint: {exc}") from exc
    return ModelParams(weights, biases, cm)


def write_summary(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
