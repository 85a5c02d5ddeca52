"""Command-line surface.

Subcommands: partition, train, finetune, gradcheck, etfcheck, report.
A config file is authoritative; flags override individual fields, and the
FEDDESK_OUTPUT_DIR environment variable overrides the output directory
(flags beat the environment).  Exit codes: 0 success, 1 validation error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import personalization_sweep
from .backend import backend_name
from .classifier import build_etf, validate_etf
from .config import (
    ExperimentConfig,
    build_partitions,
    load_config,
    load_data,
    prepare,
    with_overrides,
)
from .engine import run
from .errors import ConfigError
from .gradcheck import run_gradcheck
from .numerics import RngStream
from .partition import check_disjoint_cover, partition_stats, save_partition
from .recording import checkpoint, emit_results, load_results, restore, write_summary

logger = logging.getLogger(__name__)


def _resolve_output_dir(cfg: ExperimentConfig, flag_value) -> ExperimentConfig:
    out = flag_value or os.environ.get("FEDDESK_OUTPUT_DIR") or cfg.output_dir
    return with_overrides(cfg, output_dir=out)


def _load_with_overrides(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    cfg = with_overrides(
        cfg,
        seed=args.seed,
        fl_seed=args.seed,
        fl_rounds=getattr(args, "rounds", None),
        fl_lr=getattr(args, "lr", None),
        fl_workers=getattr(args, "workers", None),
    )
    return _resolve_output_dir(cfg, args.output_dir)


def cmd_partition(args) -> int:
    cfg = _load_with_overrides(args)
    train, test = load_data(cfg)
    train_part, test_part = build_partitions(cfg, train, test)
    check_disjoint_cover(train_part, train.n)
    check_disjoint_cover(test_part, test.n)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_partition(train_part, outdir / "partition_train.json")
    save_partition(test_part, outdir / "partition_test.json")
    stats = partition_stats(train_part, train.labels)
    sizes = train_part.sizes()
    n_observed = [len(c.observed) for c in stats.clients]
    print(f"strategy={train_part.strategy} param={train_part.param} clients={train_part.n_clients}")
    print(f"train sizes: min={min(sizes)} max={max(sizes)} total={train_part.total()}")
    print(f"classes per client: min={min(n_observed)} max={max(n_observed)}")
    print(f"wrote {outdir / 'partition_train.json'} and {outdir / 'partition_test.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_with_overrides(args)
    data = prepare(cfg)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_partition(data.train_partition, outdir / "partition_train.json")
    save_partition(data.test_partition, outdir / "partition_test.json")
    result = run(cfg.fl, data)
    emit_results(result.records, outdir / "results.csv")
    for completed, params in result.checkpoints.items():
        checkpoint(params, outdir / f"checkpoint_r{completed}.json")
    checkpoint(result.final, outdir / "checkpoint_final.json")
    final_acc = next(
        (r.accuracy for r in reversed(result.records) if r.accuracy is not None), None
    )
    write_summary(
        {
            "config": cfg.to_dict(),
            "backend": backend_name(),
            "rounds_completed": cfg.fl.rounds,
            "final_accuracy": final_acc,
        },
        outdir / "summary.json",
    )
    print(f"completed {cfg.fl.rounds} rounds; final accuracy: {final_acc}")
    print(f"results in {outdir}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_with_overrides(args)
    if cfg.finetune is None:
        raise ConfigError("config has no 'finetune' block")
    data = prepare(cfg)
    global_params = restore(args.checkpoint)
    report = personalization_sweep(
        global_params,
        data.train,
        data.test,
        data.train_partition,
        data.test_partition,
        cfg.finetune,
    )
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "personalization.csv", "w") as fh:
        fh.write("client,accuracy\n")
        for cid, acc in zip(report.client_ids, report.accuracies):
            fh.write(f"{cid},{acc!r}\n")
    write_summary(
        {
            "config": cfg.to_dict(),
            "mean_accuracy": report.mean,
            "std_accuracy": report.std,
            "n_clients": len(report.client_ids),
            "skipped_clients": list(report.skipped),
        },
        outdir / "personalization_summary.json",
    )
    print(f"personalized accuracy: {report.mean:.4f} +- {report.std:.4f} "
          f"over {len(report.client_ids)} clients ({len(report.skipped)} skipped)")
    return 0


def cmd_gradcheck(args) -> int:
    results, ok = run_gradcheck(trials=args.trials, tolerance=args.tolerance, seed=args.seed or 0)
    for res in results:
        status = "ok" if res.max_error < args.tolerance else "FAIL"
        print(f"{res.name:8s} trials={res.trials} max_rel_err={res.max_error:.3e} {status}")
    print(f"tolerance {args.tolerance:g}: {'all gradients match' if ok else 'MISMATCH'}")
    return 0 if ok else 1


def cmd_etfcheck(args) -> int:
    cm = build_etf(args.dim, args.classes, RngStream(args.seed or 0).child("etfcheck"))
    report = validate_etf(cm)
    print(f"C={args.classes} d={args.dim} target pairwise cosine {report.pairwise_target:.6f}")
    print(f"max norm deviation:   {report.max_norm_deviation:.3e}")
    print(f"max cosine deviation: {report.max_cosine_deviation:.3e}")
    ok = (
        report.max_norm_deviation < args.tolerance
        and report.max_cosine_deviation < args.tolerance
    )
    print("ok" if ok else "FAIL")
    return 0 if ok else 1


def cmd_report(args) -> int:
    rows = load_results(args.results)
    global_rows = [r for r in rows if r.group == "global" and "accuracy" in r.values]
    if not global_rows:
        print("no evaluated rounds in this file")
        return 0
    best = max(global_rows, key=lambda r: r.values["accuracy"])
    last = global_rows[-1]
    print(f"rounds evaluated: {len(global_rows)}")
    print(f"final accuracy: {last.values['accuracy']:.4f} (round {last.round})")
    print(f"best accuracy:  {best.values['accuracy']:.4f} (round {best.round})")
    diag_rows = [r for r in rows if r.group == "alignment"]
    if diag_rows:
        d = diag_rows[-1].values
        obs = d.get("obs_alignment")
        unobs = d.get("unobs_alignment")
        print(
            f"final local alignment: observed={_maybe(obs)} unobserved={_maybe(unobs)}"
        )
    if args.json:
        payload = {
            "final_accuracy": last.values["accuracy"],
            "final_round": last.round,
            "best_accuracy": best.values["accuracy"],
            "best_round": best.round,
        }
        print(json.dumps(payload, sort_keys=True))
    return 0


def _maybe(v) -> str:
    return "absent" if v is None else f"{v:.4f}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feddesk",
        description="Deterministic desk-scale federated learning simulator",
    )
    parser.add_argument("--version", action="version", version=f"feddesk {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log engine progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, rounds=False):
        p.add_argument("-c", "--config", required=True, help="experiment config JSON")
        p.add_argument("--output-dir", help="override the config's output directory")
        p.add_argument("--seed", type=int, help="override the run seed")
        if rounds:
            p.add_argument("--rounds", type=int, help="override the round count")
            p.add_argument("--lr", type=float, help="override the initial learning rate")
            p.add_argument("--workers", type=int, help="client episodes per round in parallel")

    p = sub.add_parser("partition", help="produce and audit a client partition")
    add_config_flags(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run global federated training")
    add_config_flags(p, rounds=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="personalized fine-tuning sweep from a checkpoint")
    add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="global model checkpoint to start from")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--trials", type=int, default=20, help="random nets per loss")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("etfcheck", help="validate the simplex-ETF classifier invariants")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_etfcheck)

    p = sub.add_parser("report", help="summarize a results.csv")
    p.add_argument("results", help="path to results.csv")
    p.add_argument("--json", action="store_true", help="also print a JSON summary line")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
