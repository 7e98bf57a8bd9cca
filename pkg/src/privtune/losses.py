"""Composite training objective: task cross-entropy, a squared-norm
penalty on the realized parameter delta, and a KL penalty measuring how
far privatization pushed the gradient distribution.

The KL term models per-coordinate clipped-gradient statistics as diagonal
Gaussians: clean p(g) = N(mu, diag v) and privatized p(g_hat) =
N(mu, diag(v + w)) where w = sigma^2 C^2 / (alpha_k B^2) is the noise
share landing on the batch-mean gradient.  Coordinate-wise,

    KL(N(mu, v + w) || N(mu, v)) = 0.5 * [ w/v - log(1 + w/v) ]

Coordinates with v below a floor are counted as degenerate and skipped.
The KL value is reported (and can drive the clip-threshold controller)
but is never backpropagated: the noise does not depend on u, so its
gradient contribution is defined as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError
from .model import AdapterState

V_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Weights of the delta-norm and KL penalties."""

    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        for name, value in (("lambda1", self.lambda1), ("lambda2", self.lambda2)):
            if not (np.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")


def task_loss(logits: np.ndarray, labels: Sequence[int]) -> float:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise UsageError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    if logits.shape[0] == 0:
        raise UsageError("task loss of an empty batch is undefined")
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), labels]
    return float(np.mean(log_z - picked))


def reg_term(adapter: AdapterState) -> float:
    """Squared norm of the realized delta P(u): Frobenius of each B@A plus
    head deltas.  Depends on u only through P(u), so it is invariant under
    the (A, B) -> (cA, B/c) reparameterization."""
    total = float(np.sum((adapter.b1 @ adapter.a1) ** 2))
    total += float(np.sum((adapter.b2 @ adapter.a2) ** 2))
    for hw in adapter.head_w:
        total += float(np.sum(hw ** 2))
    for hb in adapter.head_b:
        total += float(np.sum(hb ** 2))
    return total


def reg_grad(adapter: AdapterState) -> np.ndarray:
    """Gradient of reg_term with respect to u; data independent, so the
    trainer may add it after noising without touching the privacy budget."""
    out = AdapterState(adapter.spec, adapter.proj)
    d1 = adapter.b1 @ adapter.a1
    d2 = adapter.b2 @ adapter.a2
    out.a1[:] = 2.0 * adapter.b1.T @ d1
    out.b1[:] = 2.0 * d1 @ adapter.a1.T
    out.a2[:] = 2.0 * adapter.b2.T @ d2
    out.b2[:] = 2.0 * d2 @ adapter.a2.T
    for k in range(len(adapter.head_w)):
        out.head_w[k][:] = 2.0 * adapter.head_w[k]
        out.head_b[k][:] = 2.0 * adapter.head_b[k]
    return out.u


@dataclass
class GradientDistStats:
    """Per-coordinate mean/variance of the clipped per-sample gradients in
    one batch; flagged degenerate when fewer than two samples back it."""

    mean: np.ndarray
    var: np.ndarray
    batch_size: int
    task_id: int
    degenerate: bool = False


def batch_gradient_stats(clipped: Sequence[np.ndarray], task_id: int) -> GradientDistStats:
    """Fixed-order per-coordinate moments of a batch of clipped gradients."""
    if len(clipped) == 0:
        raise UsageError("cannot compute gradient statistics of an empty batch")
    stack = np.stack(clipped)
    mean = np.sum(stack, axis=0) / stack.shape[0]
    var = np.sum((stack - mean) ** 2, axis=0) / stack.shape[0]
    return GradientDistStats(mean, var, stack.shape[0], task_id,
                             degenerate=stack.shape[0] < 2)


@dataclass
class KlEstimate:
    value: float
    coordinates_used: int
    degenerate_count: int


def gradient_kl(
    stats: GradientDistStats,
    sigma: float,
    clip_c: float,
    alpha_k: float,
    v_floor: float = V_FLOOR,
) -> KlEstimate:
    """Closed-form diagonal-Gaussian KL between privatized and clean
    gradient distributions; sigma = 0 gives exactly 0."""
    if not sigma >= 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if not alpha_k > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha_k}")
    var = np.asarray(stats.var, dtype=np.float64)
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise NumericError("gradient variance estimates must be finite and >= 0")
    if sigma == 0.0:
        return KlEstimate(0.0, int(np.sum(var >= v_floor)), int(np.sum(var < v_floor)))
    w = sigma ** 2 * clip_c ** 2 / (alpha_k * stats.batch_size ** 2)
    live = var >= v_floor
    ratio = w / var[live]
    value = float(np.sum(0.5 * (ratio - np.log1p(ratio))))
    return KlEstimate(value, int(np.sum(live)), int(np.sum(~live)))


@dataclass
class CompositeLoss:
    """Total objective and its three logged addends (already weighted)."""

    total: float
    task: float
    reg: float
    kl: float


def composite_loss(
    task_loss_value: float,
    adapter: AdapterState,
    stats: GradientDistStats,
    config: LossConfig,
    sigma: float,
    clip_c: float,
    alpha_k: float,
) -> CompositeLoss:
    """L = L_task + lambda1 * ||P(u)||^2 + lambda2 * KL, with the weighted
    addends returned so logs always sum to the total bit-exactly."""
    reg = config.lambda1 * reg_term(adapter)
    kl = config.lambda2 * gradient_kl(stats, sigma, clip_c, alpha_k).value
    total = task_loss_value + reg + kl
    return CompositeLoss(total, task_loss_value, reg, kl)
