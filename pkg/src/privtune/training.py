"""The DP-SGD training loop over the adapter subspace.

Each step visits the tasks round-robin.  Per task: draw a fixed-size
uniform batch with a keyed stream, compute exact per-sample gradients,
privatize them (clip, sum, noise, average), add the data-independent
delta-norm regularizer gradient after noising, and take a plain SGD step
on u.  One accountant event is recorded per task per step.

Everything is a pure function of (config, dataset, seed): batches and
noise come from counter-based streams, reductions run in fixed index
order, so repeated runs are bit-identical regardless of parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses
from .accounting import RdpLedger, PrivacyReport, effective_sigma, to_eps_delta
from .data import Dataset, InstructionRecord
from .dp import TaskWeights, clip, privatize_batch
from .errors import ConfigError, NumericError, UsageError
from .model import (
    AdapterState,
    BackboneSpec,
    EffectiveParams,
    ProjectionSpec,
    forward,
    init_adapter,
    init_backbone,
    per_sample_grad,
    project_update,
    trainable_fraction,
)
from .rng import choice_without_replacement, derive_key

DEFAULT_HIDDEN_DIM = 32
DEFAULT_RANK = 4
# Multiplier applied to the clip threshold when the controller is enabled
# and a task's KL estimate exceeds the configured ceiling.
CONTROLLER_CLIP_GROWTH = 1.05


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    steps: int
    clip_c: float
    sigma: float
    alpha: tuple[float, ...]
    lambda1: float = 0.0
    lambda2: float = 0.0
    delta: float = 1e-5
    seed: int = 0
    eval_every: int = 50
    composition: str = "parallel"
    controller: float = 0.0  # 0 = off; > 0 enables with that KL ceiling
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    rank: int = DEFAULT_RANK
    heads_trainable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not self.clip_c > 0:
            raise ConfigError(f"clip_c must be > 0, got {self.clip_c}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.composition not in ("parallel", "sequential"):
            raise ConfigError(f"composition must be parallel or sequential, got {self.composition!r}")
        if not self.controller >= 0:
            raise ConfigError(f"controller ceiling must be >= 0, got {self.controller}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        TaskWeights(self.alpha)
        losses.LossConfig(self.lambda1, self.lambda2)


@dataclass
class MetricsRow:
    step: int
    loss_task: float
    loss_reg: float
    loss_kl: float
    loss_total: float
    eps_overall: float
    acc_macro: float
    acc_per_task: tuple[float, ...]
    trainable_fraction: float
    kl_degenerate_count: int


def metrics_columns(num_tasks: int) -> list[str]:
    cols = ["step", "loss_task", "loss_reg", "loss_kl", "loss_total",
            "eps_overall", "acc_macro"]
    cols.extend(f"acc_task_{k}" for k in range(num_tasks))
    cols.extend(["trainable_fraction", "kl_degenerate_count"])
    return cols


def metrics_to_csv(rows: list[MetricsRow], num_tasks: int) -> str:
    """Fixed-order CSV, repr floats, newline-terminated final row."""
    lines = [",".join(metrics_columns(num_tasks))]
    for r in rows:
        fields = [str(r.step), repr(r.loss_task), repr(r.loss_reg), repr(r.loss_kl),
                  repr(r.loss_total), repr(r.eps_overall), repr(r.acc_macro)]
        fields.extend(repr(a) for a in r.acc_per_task)
        fields.append(repr(r.trainable_fraction))
        fields.append(str(r.kl_degenerate_count))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def write_metrics_csv(rows: list[MetricsRow], num_tasks: int, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_to_csv(rows, num_tasks))


@dataclass
class TrainResult:
    metrics: list[MetricsRow]
    adapter: AdapterState
    privacy_report: PrivacyReport
    frozen_checksum: int
    backbone_spec: BackboneSpec
    projection: ProjectionSpec
    trainable_fraction: float
    final_theta: EffectiveParams


class TrainAbort(NumericError):
    """Raised when the loss or parameters go non-finite mid-run."""

    def __init__(self, step: int, task_id: int, last_metrics_step: int | None):
        self.step = step
        self.task_id = task_id
        self.last_metrics_step = last_metrics_step
        checkpoint = ("no metrics emitted yet" if last_metrics_step is None
                      else f"last good metrics at step {last_metrics_step}")
        super().__init__(
            f"non-finite value at step {step}, task {task_id} ({checkpoint})"
        )


def evaluate(theta: EffectiveParams, records: list[InstructionRecord]) -> tuple[tuple[float, ...], float]:
    """Per-task and macro argmax accuracy; argmax ties resolve to the
    lowest class index."""
    num_tasks = theta.frozen.spec.num_tasks
    correct = [0] * num_tasks
    seen = [0] * num_tasks
    for rec in records:
        logits = forward(theta, rec.features, rec.task_id)
        if int(np.argmax(logits)) == rec.label:
            correct[rec.task_id] += 1
        seen[rec.task_id] += 1
    if any(s == 0 for s in seen):
        empty = [k for k, s in enumerate(seen) if s == 0]
        raise UsageError(f"evaluation set is empty for tasks {empty}")
    per_task = tuple(c / s for c, s in zip(correct, seen))
    return per_task, float(np.mean(per_task))


def _group_by_task(records: list[InstructionRecord], num_tasks: int) -> list[list[InstructionRecord]]:
    groups: list[list[InstructionRecord]] = [[] for _ in range(num_tasks)]
    for rec in records:
        if not 0 <= rec.task_id < num_tasks:
            raise UsageError(f"record task {rec.task_id} outside the dataset's {num_tasks} tasks")
        groups[rec.task_id].append(rec)
    return groups


def train(config: TrainConfig, dataset: Dataset) -> TrainResult:
    """Run the full DP-SGD loop; deterministic given (config, dataset)."""
    num_tasks = dataset.num_tasks
    if len(config.alpha) != num_tasks:
        raise ConfigError(f"alpha has {len(config.alpha)} entries for {num_tasks} tasks")
    by_task = _group_by_task(dataset.train, num_tasks)
    for k, group in enumerate(by_task):
        if config.batch_size > len(group):
            raise ConfigError(
                f"batch_size {config.batch_size} exceeds task {k} train size {len(group)}"
            )

    backbone_spec = BackboneSpec(
        input_dim=dataset.input_dim,
        hidden_dim=config.hidden_dim,
        num_tasks=num_tasks,
        classes_per_task=dataset.classes_per_task,
        init_seed=derive_key(config.seed, "backbone"),
    )
    proj = ProjectionSpec(rank=config.rank, heads_trainable=config.heads_trainable)
    frozen = init_backbone(backbone_spec)
    checksum_before = frozen.checksum()
    adapter = init_adapter(backbone_spec, proj, derive_key(config.seed, "adapter"))
    fraction = trainable_fraction(backbone_spec, proj)
    loss_config = losses.LossConfig(config.lambda1, config.lambda2)

    ledger = RdpLedger(num_tasks) if config.sigma > 0 else None
    sig_eff = [effective_sigma(config.sigma, a) for a in config.alpha] if ledger else None
    q = [config.batch_size / len(group) for group in by_task]

    clip_c = config.clip_c
    rows: list[MetricsRow] = []
    last_metrics_step: int | None = None

    for t in range(config.steps):
        log_this_step = (t + 1) % config.eval_every == 0 or t == config.steps - 1
        step_task_loss = []
        step_kl = []
        step_degenerate = 0
        for k in range(num_tasks):
            picked = choice_without_replacement(
                derive_key(config.seed, "batch", t, k), len(by_task[k]), config.batch_size
            )
            batch = [by_task[k][i] for i in picked]
            theta = project_update(frozen, adapter)
            try:
                grads = [per_sample_grad(theta, rec, int(i)) for rec, i in zip(batch, picked)]
                released = privatize_batch(
                    grads, k, clip_c, config.sigma, config.alpha[k],
                    key=derive_key(config.seed, "noise", t, k), step=t,
                )
            except NumericError as exc:
                raise TrainAbort(t, k, last_metrics_step) from exc

            clipped = [clip(g.g, clip_c) for g in grads]
            stats = losses.batch_gradient_stats(clipped, k)
            kl = losses.gradient_kl(stats, config.sigma, clip_c, config.alpha[k])
            step_kl.append(kl.value)
            step_degenerate += kl.degenerate_count

            update = released.g_hat
            if config.lambda1 > 0:
                update = update + config.lambda1 * losses.reg_grad(adapter)
            adapter.u -= config.learning_rate * update
            if not np.all(np.isfinite(adapter.u)):
                raise TrainAbort(t, k, last_metrics_step)

            if ledger is not None:
                ledger.record_step(k, sig_eff[k], q[k])
            if config.controller > 0 and kl.value > config.controller:
                clip_c *= CONTROLLER_CLIP_GROWTH

            if log_this_step:
                logits = np.stack([forward(theta, rec.features, k) for rec in batch])
                labels = [rec.label for rec in batch]
                step_task_loss.append(losses.task_loss(logits, labels))

        if log_this_step:
            theta = project_update(frozen, adapter)
            acc_per_task, acc_macro = evaluate(theta, dataset.eval)
            mean_task_loss = float(np.mean(step_task_loss))
            reg = config.lambda1 * losses.reg_term(adapter)
            kl_term = config.lambda2 * float(np.mean(step_kl))
            total = mean_task_loss + reg + kl_term
            if not math.isfinite(total):
                raise TrainAbort(t, -1, last_metrics_step)
            eps = (to_eps_delta(ledger, config.delta, config.composition).overall_eps
                   if ledger is not None else math.inf)
            rows.append(MetricsRow(
                step=t + 1,
                loss_task=mean_task_loss,
                loss_reg=reg,
                loss_kl=kl_term,
                loss_total=total,
                eps_overall=eps,
                acc_macro=acc_macro,
                acc_per_task=acc_per_task,
                trainable_fraction=fraction,
                kl_degenerate_count=step_degenerate,
            ))
            last_metrics_step = t + 1

    if ledger is not None:
        report = to_eps_delta(ledger, config.delta, config.composition)
    else:
        report = PrivacyReport(
            task_eps=(math.inf,) * num_tasks,
            task_order=(math.nan,) * num_tasks,
            overall_eps=math.inf,
            delta=config.delta,
            composition=config.composition,
            task_steps=(config.steps,) * num_tasks,
        )

    final_theta = project_update(frozen, adapter)
    checksum_after = frozen.checksum()
    assert checksum_before == checksum_after, "frozen backbone changed during training"
    return TrainResult(
        metrics=rows,
        adapter=adapter,
        privacy_report=report,
        frozen_checksum=checksum_after,
        backbone_spec=backbone_spec,
        projection=proj,
        trainable_fraction=fraction,
        final_theta=final_theta,
    )
