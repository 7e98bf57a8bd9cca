"""Command-line entry points.

Subcommands: gen-data, train, sweep, robustness, audit, report.
Exit codes: 0 success, 1 configuration error, 2 runtime numeric abort,
3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import config as cfg
from .accounting import audit_report
from .data import build_dataset, load_dataset, read_manifest, save_dataset
from .errors import ConfigError, DatasetFormatError, NumericError
from .experiments import (
    REPORT_COLUMNS,
    ROBUSTNESS_COLUMNS,
    SWEEP_COLUMNS,
    SweepGrid,
    build_report,
    rows_to_csv,
    run_robustness,
    run_sweep,
    write_csv,
)
from .training import train, write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


def _cmd_gen_data(args) -> int:
    manifest = read_manifest(args.manifest)
    dataset, dropped = build_dataset(manifest)
    save_dataset(dataset, args.out, dropped)
    if dropped:
        print(f"warning: dropped {dropped} samples to keep classes balanced", file=sys.stderr)
    print(f"wrote {len(dataset.train)} train / {len(dataset.eval)} eval records to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    file_config = cfg.parse_train_config(args.config)
    dataset = load_dataset(file_config.dataset_path)
    result = train(file_config.train, dataset)
    os.makedirs(file_config.out_dir, exist_ok=True)
    write_metrics_csv(result.metrics, dataset.num_tasks,
                      os.path.join(file_config.out_dir, "metrics.csv"))
    _write_privacy_csv(result.privacy_report,
                       os.path.join(file_config.out_dir, "privacy.csv"))
    final_acc = result.metrics[-1].acc_macro if result.metrics else float("nan")
    print(f"finished {file_config.train.steps} steps; "
          f"macro accuracy {final_acc}; epsilon {result.privacy_report.overall_eps}")
    return EXIT_OK


def _privacy_rows(report):
    rows = []
    for k, (eps, order) in enumerate(zip(report.task_eps, report.task_order)):
        rows.append({"task": k, "eps": repr(eps), "optimal_order": repr(order)})
    rows.append({"task": "overall", "eps": repr(report.overall_eps),
                 "optimal_order": ""})
    return rows


def _write_privacy_csv(report, path) -> None:
    write_csv(_privacy_rows(report), ["task", "eps", "optimal_order"], path)


def _cmd_sweep(args) -> int:
    file_config = cfg.parse_sweep_config(args.config)
    dataset = load_dataset(file_config.dataset_path)
    grid = SweepGrid(file_config.learning_rates, file_config.batch_sizes,
                     file_config.base, file_config.replicates)
    rows = run_sweep(grid, dataset)
    os.makedirs(file_config.out_dir, exist_ok=True)
    write_csv(rows, SWEEP_COLUMNS, os.path.join(file_config.out_dir, "sweep.csv"))
    print(f"swept {len(rows)} cells into {file_config.out_dir}/sweep.csv")
    return EXIT_OK


def _cmd_robustness(args) -> int:
    file_config = cfg.parse_robustness_config(args.config)
    manifest = read_manifest(file_config.manifest_path)
    rows = run_robustness(list(file_config.levels), file_config.base, manifest)
    os.makedirs(file_config.out_dir, exist_ok=True)
    write_csv(rows, ROBUSTNESS_COLUMNS,
              os.path.join(file_config.out_dir, "robustness.csv"))
    print(f"ran {len(rows)} corruption levels into {file_config.out_dir}/robustness.csv")
    return EXIT_OK


def _cmd_audit(args) -> int:
    audit = cfg.parse_audit_config(args.config)
    report = audit_report(
        sigma=audit.sigma,
        alpha=audit.alpha,
        batch_size=audit.batch_size,
        n_per_task=audit.n_per_task,
        steps=audit.steps,
        delta=audit.delta,
        composition=audit.composition,
    )
    sys.stdout.write(rows_to_csv(_privacy_rows(report), ["task", "eps", "optimal_order"]))
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = build_report(args.runs)
    sys.stdout.write(rows_to_csv(rows, REPORT_COLUMNS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privtune",
        description="Differentially private low-rank adapter fine-tuning, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset from a manifest file")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run one training job from a config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="learning-rate x batch-size grid sweep")
    p.add_argument("config")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("robustness", help="label-noise / feedback-bias levels")
    p.add_argument("config")
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("audit", help="privacy accounting without training")
    p.add_argument("config")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("report", help="summarize finished run directories")
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
