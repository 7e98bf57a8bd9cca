"""Differentially private parameter-efficient fine-tuning, desk scale.

A frozen two-layer backbone with per-task heads is adapted through a
low-rank trainable subspace under DP-SGD: per-sample gradient clipping,
adaptive per-task Gaussian noise, Renyi-DP accounting, and a composite
objective with a gradient-distribution KL penalty.  The
``DPAdapterClassifier`` estimator is the main entry point; the lower
modules expose every operation individually, and the ``privtune`` CLI
drives dataset generation, training, sweeps, robustness runs, privacy
audits, and reports.
"""

from .accounting import (
    DEFAULT_ORDERS,
    PrivacyReport,
    RdpLedger,
    audit_report,
    effective_sigma,
    rdp_gaussian,
    rdp_subsampled_gaussian,
    to_eps_delta,
)
from .data import (
    CorruptionSpec,
    Dataset,
    DatasetManifest,
    InstructionRecord,
    build_dataset,
    generate_dataset,
    inject_feedback_bias,
    inject_label_noise,
    load_dataset,
    nearest_center_accuracy,
    read_records,
    save_dataset,
    write_records,
)
from .dp import (
    ClipConfig,
    NoiseConfig,
    PrivatizedGradient,
    TaskWeights,
    add_noise,
    allocate_variance,
    clip,
    privatize_batch,
)
from .errors import (
    ConfigError,
    DatasetFormatError,
    NumericError,
    ShapeError,
    UsageError,
)
from .estimator import DPAdapterClassifier
from .losses import (
    GradientDistStats,
    KlEstimate,
    LossConfig,
    batch_gradient_stats,
    composite_loss,
    gradient_kl,
    reg_grad,
    reg_term,
    task_loss,
)
from .model import (
    AdapterState,
    BackboneSpec,
    EffectiveParams,
    FrozenParams,
    PerSampleGradient,
    ProjectionSpec,
    finite_diff_grad,
    forward,
    init_adapter,
    init_backbone,
    per_sample_grad,
    project_update,
    sample_loss,
    trainable_fraction,
)
from .training import (
    MetricsRow,
    TrainAbort,
    TrainConfig,
    TrainResult,
    evaluate,
    metrics_to_csv,
    train,
    write_metrics_csv,
)
from .experiments import SweepGrid, build_report, run_robustness, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AdapterState", "BackboneSpec", "ClipConfig", "ConfigError",
    "CorruptionSpec", "DatasetFormatError", "DEFAULT_ORDERS",
    "DPAdapterClassifier", "Dataset", "DatasetManifest", "EffectiveParams",
    "FrozenParams", "GradientDistStats", "InstructionRecord", "KlEstimate",
    "LossConfig", "MetricsRow", "NoiseConfig", "NumericError",
    "PerSampleGradient", "PrivacyReport", "PrivatizedGradient",
    "ProjectionSpec", "RdpLedger", "ShapeError", "SweepGrid", "TaskWeights",
    "TrainAbort", "TrainConfig", "TrainResult", "UsageError", "add_noise",
    "allocate_variance", "audit_report", "batch_gradient_stats",
    "build_dataset", "build_report", "clip", "composite_loss",
    "effective_sigma", "evaluate", "finite_diff_grad", "forward",
    "generate_dataset", "gradient_kl", "init_adapter", "init_backbone",
    "inject_feedback_bias", "inject_label_noise", "load_dataset",
    "metrics_to_csv", "nearest_center_accuracy", "per_sample_grad",
    "privatize_batch", "project_update", "rdp_gaussian",
    "rdp_subsampled_gaussian", "read_records", "reg_grad", "reg_term",
    "run_robustness", "run_sweep", "sample_loss", "save_dataset",
    "task_loss", "to_eps_delta", "train", "trainable_fraction",
    "write_metrics_csv", "write_records",
]
