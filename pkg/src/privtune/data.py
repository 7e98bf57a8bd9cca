"""Deterministic synthetic multi-task data, corruption injectors, and the
tab-separated dataset / key=value manifest file formats.

Each task is a Gaussian-cluster classification problem: class centers are
drawn N(0, center_scale^2 I) and samples N(center, zeta^2 I), so the
accuracy ceiling is controlled by the spread-to-scale ratio and a
nearest-center classifier gives an independent baseline for trend tests.

Corruption touches the train split only.  Symmetric label noise flips a
label to a uniformly random different class with probability p; feedback
bias overwrites it with a fixed target class with probability b (applied
after noise).  The pre-corruption label always survives in origin_label.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetFormatError, UsageError
from .rng import derive_key, normals, uniforms

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
TRAIN_NAME = "train.tsv"
EVAL_NAME = "eval.tsv"

_MANIFEST_KEYS = ("k", "d_in", "c_k", "n_train_k", "n_eval_k", "zeta",
                  "center_scale", "seed", "label_noise_rate", "feedback_bias",
                  "bias_target", "format_version")
_MANIFEST_REQUIRED = ("k", "d_in", "c_k", "n_train_k", "n_eval_k", "zeta", "center_scale")


@dataclass
class InstructionRecord:
    """One (task, features, label) training example."""

    task_id: int
    label: int
    features: np.ndarray
    origin_label: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if not np.all(np.isfinite(self.features)):
            raise ConfigError(f"record features must be finite (task {self.task_id})")


@dataclass(frozen=True)
class CorruptionSpec:
    label_noise_rate: float = 0.0
    feedback_bias_strength: float = 0.0
    bias_target_class: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.label_noise_rate <= 1:
            raise ConfigError(f"label noise rate must lie in [0, 1], got {self.label_noise_rate}")
        if not 0 <= self.feedback_bias_strength <= 1:
            raise ConfigError(f"feedback bias must lie in [0, 1], got {self.feedback_bias_strength}")


@dataclass(frozen=True)
class DatasetManifest:
    num_tasks: int
    input_dim: int
    classes_per_task: tuple[int, ...]
    n_train: tuple[int, ...]
    n_eval: tuple[int, ...]
    zeta: float
    center_scale: float
    seed: int = 0
    label_noise_rate: float = 0.0
    feedback_bias: float = 0.0
    bias_target: int = 0
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "classes_per_task", tuple(int(c) for c in self.classes_per_task))
        object.__setattr__(self, "n_train", tuple(int(n) for n in self.n_train))
        object.__setattr__(self, "n_eval", tuple(int(n) for n in self.n_eval))
        if self.num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        for name, values in (("c_k", self.classes_per_task), ("n_train_k", self.n_train),
                             ("n_eval_k", self.n_eval)):
            if len(values) != self.num_tasks:
                raise ConfigError(f"{name} has {len(values)} entries for {self.num_tasks} tasks")
        if any(c < 2 for c in self.classes_per_task):
            raise ConfigError("every task needs >= 2 classes")
        if any(n < 1 for n in self.n_train + self.n_eval):
            raise ConfigError("per-task sample counts must be >= 1")
        if not self.zeta > 0:
            raise ConfigError(f"zeta must be > 0, got {self.zeta}")
        if not self.center_scale > 0:
            raise ConfigError(f"center_scale must be > 0, got {self.center_scale}")
        if not all(0 <= c < ck for ck in self.classes_per_task for c in (self.bias_target,)):
            raise ConfigError(f"bias_target {self.bias_target} invalid for some task")

    @property
    def corruption(self) -> CorruptionSpec:
        return CorruptionSpec(self.label_noise_rate, self.feedback_bias,
                              self.bias_target, self.seed)


@dataclass
class Dataset:
    """Generated records plus the geometry the model needs."""

    input_dim: int
    classes_per_task: tuple[int, ...]
    train: list[InstructionRecord]
    eval: list[InstructionRecord]
    manifest: DatasetManifest | None = None

    @property
    def num_tasks(self) -> int:
        return len(self.classes_per_task)


def _interleave_eval(n_train: int, n_eval: int):
    """Bresenham pattern assigning positions 0..n-1 to eval at even spacing."""
    total = n_train + n_eval
    for s in range(total):
        yield ((s + 1) * n_eval) // total > (s * n_eval) // total


def generate_dataset(manifest: DatasetManifest) -> tuple[Dataset, int]:
    """Draw the clustered records for every task; returns (dataset, dropped).

    ``dropped`` counts requested samples lost to rounding per-class counts
    down when a split size is not divisible by the task's class count.
    """
    train: list[InstructionRecord] = []
    eval_: list[InstructionRecord] = []
    dropped = 0
    for k in range(manifest.num_tasks):
        c_k = manifest.classes_per_task[k]
        train_pc = manifest.n_train[k] // c_k
        eval_pc = manifest.n_eval[k] // c_k
        dropped += manifest.n_train[k] - train_pc * c_k
        dropped += manifest.n_eval[k] - eval_pc * c_k
        if train_pc < 1 or eval_pc < 1:
            raise ConfigError(
                f"task {k}: per-class counts round to zero "
                f"(n_train={manifest.n_train[k]}, n_eval={manifest.n_eval[k]}, classes={c_k})"
            )
        centers = manifest.center_scale * normals(
            derive_key(manifest.seed, "centers", k), c_k * manifest.input_dim
        ).reshape(c_k, manifest.input_dim)
        n_pc = train_pc + eval_pc
        samples = []
        for c in range(c_k):
            noise = normals(derive_key(manifest.seed, "samples", k, c),
                            n_pc * manifest.input_dim).reshape(n_pc, manifest.input_dim)
            samples.append(centers[c] + manifest.zeta * noise)
        split = list(_interleave_eval(train_pc, eval_pc))
        for s in range(n_pc):
            for c in range(c_k):
                rec = InstructionRecord(k, c, samples[c][s], c)
                (eval_ if split[s] else train).append(rec)
    dataset = Dataset(manifest.input_dim, manifest.classes_per_task, train, eval_, manifest)
    return dataset, dropped


def inject_label_noise(
    records: list[InstructionRecord],
    p: float,
    seed: int,
    classes_per_task: tuple[int, ...],
) -> list[InstructionRecord]:
    """With probability p, replace each label by a uniformly random
    different class of its task; origin_label is untouched."""
    if not 0 <= p <= 1:
        raise ConfigError(f"label noise rate must lie in [0, 1], got {p}")
    key = derive_key(seed, "label-noise")
    u = uniforms(key, 2 * len(records))
    out = []
    for i, rec in enumerate(records):
        if u[2 * i] < p:
            c_k = classes_per_task[rec.task_id]
            j = int(u[2 * i + 1] * (c_k - 1))
            new_label = j if j < rec.label else j + 1
            out.append(replace_label(rec, new_label))
        else:
            out.append(rec)
    return out


def inject_feedback_bias(
    records: list[InstructionRecord],
    b: float,
    target_class: int,
    seed: int,
    classes_per_task: tuple[int, ...],
) -> list[InstructionRecord]:
    """With probability b, overwrite each label with target_class
    (systematic skew toward one class, unlike symmetric noise)."""
    if not 0 <= b <= 1:
        raise ConfigError(f"feedback bias must lie in [0, 1], got {b}")
    if any(not 0 <= target_class < c for c in classes_per_task):
        raise ConfigError(f"bias target {target_class} is not a class of every task")
    key = derive_key(seed, "feedback-bias")
    u = uniforms(key, len(records))
    out = []
    for i, rec in enumerate(records):
        if u[i] < b:
            out.append(replace_label(rec, target_class))
        else:
            out.append(rec)
    return out


def replace_label(rec: InstructionRecord, new_label: int) -> InstructionRecord:
    return InstructionRecord(rec.task_id, new_label, rec.features, rec.origin_label)


def apply_corruption(
    train: list[InstructionRecord],
    spec: CorruptionSpec,
    classes_per_task: tuple[int, ...],
) -> list[InstructionRecord]:
    """Label noise first, then feedback bias; order is part of the format."""
    out = inject_label_noise(train, spec.label_noise_rate, spec.seed, classes_per_task)
    out = inject_feedback_bias(out, spec.feedback_bias_strength,
                               spec.bias_target_class, spec.seed, classes_per_task)
    return out


def write_records(records: list[InstructionRecord], path) -> None:
    """One record per line: task, label, origin_label, then features, all
    tab-separated; floats as shortest round-trip decimals."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        for rec in records:
            fields = [str(rec.task_id), str(rec.label), str(rec.origin_label)]
            fields.extend(repr(float(v)) for v in rec.features)
            fh.write("\t".join(fields) + "\n")


def read_records(path) -> list[InstructionRecord]:
    """Inverse of write_records; empty files give an empty collection."""
    records: list[InstructionRecord] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 4:
                raise DatasetFormatError(path, line_no,
                                         f"expected at least 4 fields, found {len(fields)}")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise DatasetFormatError(path, line_no,
                                         f"expected {width} fields, found {len(fields)}")
            try:
                task_id = int(fields[0])
                label = int(fields[1])
                origin = int(fields[2])
                features = np.array([float(v) for v in fields[3:]])
            except ValueError as exc:
                raise DatasetFormatError(path, line_no, str(exc)) from None
            records.append(InstructionRecord(task_id, label, features, origin))
    return records


def write_manifest(manifest: DatasetManifest, path, dropped: int = 0) -> None:
    def fmt_list(values):
        return ",".join(str(v) for v in values)

    lines = [
        f"k={manifest.num_tasks}",
        f"d_in={manifest.input_dim}",
        f"c_k={fmt_list(manifest.classes_per_task)}",
        f"n_train_k={fmt_list(manifest.n_train)}",
        f"n_eval_k={fmt_list(manifest.n_eval)}",
        f"zeta={manifest.zeta!r}",
        f"center_scale={manifest.center_scale!r}",
        f"seed={manifest.seed}",
        f"label_noise_rate={manifest.label_noise_rate!r}",
        f"feedback_bias={manifest.feedback_bias!r}",
        f"bias_target={manifest.bias_target}",
        f"format_version={manifest.format_version}",
    ]
    if dropped:
        lines.append(f"# dropped_by_rounding={dropped}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetFormatError(path, line_no, "expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _MANIFEST_KEYS:
                raise DatasetFormatError(path, line_no, f"unknown manifest key {key!r}")
            if key in values:
                raise DatasetFormatError(path, line_no, f"duplicate manifest key {key!r}")
            values[key] = value.strip()
    missing = [k for k in _MANIFEST_REQUIRED if k not in values]
    if missing:
        raise DatasetFormatError(path, 0, f"missing manifest keys: {', '.join(missing)}")

    def parse_int_list(text):
        return tuple(int(v) for v in text.split(","))

    try:
        return DatasetManifest(
            num_tasks=int(values["k"]),
            input_dim=int(values["d_in"]),
            classes_per_task=parse_int_list(values["c_k"]),
            n_train=parse_int_list(values["n_train_k"]),
            n_eval=parse_int_list(values["n_eval_k"]),
            zeta=float(values["zeta"]),
            center_scale=float(values["center_scale"]),
            seed=int(values.get("seed", "0")),
            label_noise_rate=float(values.get("label_noise_rate", "0")),
            feedback_bias=float(values.get("feedback_bias", "0")),
            bias_target=int(values.get("bias_target", "0")),
            format_version=int(values.get("format_version", str(FORMAT_VERSION))),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise DatasetFormatError(path, 0, str(exc)) from None


def build_dataset(manifest: DatasetManifest) -> tuple[Dataset, int]:
    """Generate and corrupt (train split only) in one deterministic shot."""
    dataset, dropped = generate_dataset(manifest)
    dataset.train = apply_corruption(dataset.train, manifest.corruption,
                                     manifest.classes_per_task)
    return dataset, dropped


def save_dataset(dataset: Dataset, out_dir, dropped: int = 0) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if dataset.manifest is None:
        raise UsageError("cannot save a dataset without a manifest")
    write_manifest(dataset.manifest, os.path.join(out_dir, MANIFEST_NAME), dropped)
    write_records(dataset.train, os.path.join(out_dir, TRAIN_NAME))
    write_records(dataset.eval, os.path.join(out_dir, EVAL_NAME))


def load_dataset(path) -> Dataset:
    manifest = read_manifest(os.path.join(path, MANIFEST_NAME))
    train = read_records(os.path.join(path, TRAIN_NAME))
    eval_ = read_records(os.path.join(path, EVAL_NAME))
    return Dataset(manifest.input_dim, manifest.classes_per_task, train, eval_, manifest)


def nearest_center_accuracy(train: list[InstructionRecord],
                            eval_: list[InstructionRecord],
                            num_tasks: int) -> float:
    """Macro accuracy of classifying eval records by the nearest per-class
    train centroid; the independent baseline for learnability checks."""
    per_task = []
    for k in range(num_tasks):
        train_k = [r for r in train if r.task_id == k]
        eval_k = [r for r in eval_ if r.task_id == k]
        if not train_k or not eval_k:
            raise UsageError(f"task {k} has an empty split")
        labels = sorted({r.label for r in train_k})
        centers = np.stack([
            np.mean([r.features for r in train_k if r.label == lab], axis=0)
            for lab in labels
        ])
        correct = 0
        for rec in eval_k:
            dist = np.sum((centers - rec.features) ** 2, axis=1)
            if labels[int(np.argmin(dist))] == rec.label:
                correct += 1
        per_task.append(correct / len(eval_k))
    return float(np.mean(per_task))
