"""Experiment drivers on top of the trainer: the learning-rate x batch-size
sweep, the label-noise / feedback-bias robustness run, and the summary
report over finished run directories.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

from .data import DatasetManifest, Dataset, build_dataset
from .errors import ConfigError, UsageError
from .training import TrainAbort, TrainConfig, train

SWEEP_COLUMNS = ["lr", "batch_size", "replicate", "status", "acc_macro",
                 "eps_overall", "trainable_fraction"]
ROBUSTNESS_COLUMNS = ["label_noise", "feedback_bias", "acc_macro",
                      "eps_overall", "trainable_fraction"]
REPORT_COLUMNS = ["tag", "trainable_pct", "accuracy_pct", "epsilon"]


@dataclass(frozen=True)
class SweepGrid:
    learning_rates: tuple[float, ...]
    batch_sizes: tuple[int, ...]
    base: TrainConfig
    replicates: int = 1

    def __post_init__(self):
        if not self.learning_rates or not self.batch_sizes:
            raise ConfigError("sweep axes must be nonempty")
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")


def _final_metrics(result):
    if not result.metrics:
        return math.nan, result.privacy_report.overall_eps
    last = result.metrics[-1]
    return last.acc_macro, last.eps_overall


def run_sweep(grid: SweepGrid, dataset: Dataset) -> list[dict]:
    """One row per (lr, batch, replicate), lexicographic order; aborted
    cells are flagged failed and the sweep continues."""
    rows = []
    for lr in sorted(grid.learning_rates):
        for batch in sorted(grid.batch_sizes):
            for rep in range(grid.replicates):
                config = replace(grid.base, learning_rate=lr, batch_size=batch,
                                 seed=grid.base.seed + rep)
                row = {"lr": lr, "batch_size": batch, "replicate": rep}
                try:
                    result = train(config, dataset)
                    acc, eps = _final_metrics(result)
                    row.update(status="ok", acc_macro=acc, eps_overall=eps,
                               trainable_fraction=result.trainable_fraction)
                except TrainAbort:
                    row.update(status="failed", acc_macro=math.nan,
                               eps_overall=math.nan, trainable_fraction=math.nan)
                rows.append(row)
    return rows


def run_robustness(
    levels: list[tuple[float, float]],
    base: TrainConfig,
    manifest: DatasetManifest,
) -> list[dict]:
    """Regenerate the dataset at each (label_noise, feedback_bias) level,
    train, and report one row per level."""
    if not levels:
        raise UsageError("robustness needs at least one corruption level")
    rows = []
    for p, b in levels:
        level_manifest = replace(manifest, label_noise_rate=p, feedback_bias=b)
        dataset, _ = build_dataset(level_manifest)
        result = train(base, dataset)
        acc, eps = _final_metrics(result)
        rows.append({
            "label_noise": p,
            "feedback_bias": b,
            "acc_macro": acc,
            "eps_overall": eps,
            "trainable_fraction": result.trainable_fraction,
        })
    return rows


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    def fmt(value):
        if isinstance(value, float):
            return repr(value)
        return str(value)

    lines = [",".join(columns)]
    lines.extend(",".join(fmt(row[c]) for c in columns) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(rows: list[dict], columns: list[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rows_to_csv(rows, columns))


def build_report(run_dirs: list[str]) -> list[dict]:
    """Aggregate final metrics rows into a Table-1-shaped summary; runs
    without a metrics file are listed as incomplete."""
    if not run_dirs:
        raise UsageError("report needs at least one run directory")
    rows = []
    for run_dir in run_dirs:
        tag = os.path.basename(os.path.normpath(run_dir))
        metrics_path = os.path.join(run_dir, "metrics.csv")
        if not os.path.exists(metrics_path):
            rows.append({"tag": tag, "trainable_pct": "incomplete",
                         "accuracy_pct": "incomplete", "epsilon": "incomplete"})
            continue
        with open(metrics_path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if len(lines) < 2:
            rows.append({"tag": tag, "trainable_pct": "incomplete",
                         "accuracy_pct": "incomplete", "epsilon": "incomplete"})
            continue
        header = lines[0].split(",")
        last = lines[-1].split(",")
        record = dict(zip(header, last))
        rows.append({
            "tag": tag,
            "trainable_pct": repr(float(record["trainable_fraction"]) * 100.0),
            "accuracy_pct": repr(float(record["acc_macro"]) * 100.0),
            "epsilon": record["eps_overall"],
        })
    return rows
