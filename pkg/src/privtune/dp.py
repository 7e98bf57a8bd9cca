"""Gradient privatization: per-sample clipping, adaptive per-task variance,
and the Gaussian mechanism on the batch sum.

The release for task k at step t is

    (1/B) * [ sum_i clip(g_i, C) + z ],   z ~ N(0, (sigma^2 C^2 / alpha_k) I)

Clipping every per-sample gradient bounds the sum's sensitivity by C, which
is what makes a Gaussian with std sigma*C a valid mechanism; alpha_k <= 1
scales the variance up for lower-weight tasks so no task ever consumes more
privacy than the uniform alpha = 1 case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError
from .model import PerSampleGradient
from .rng import normals

# Norms within this relative band of C count as already clipped; keeps
# clip(clip(g)) bit-identical to clip(g) despite rounding in the rescale.
_CLIP_SLACK = 1e-12


@dataclass(frozen=True)
class ClipConfig:
    """L2 threshold applied to each per-sample gradient."""

    clip_c: float

    def __post_init__(self):
        if not (np.isfinite(self.clip_c) and self.clip_c > 0):
            raise ConfigError(f"clip threshold must be finite and > 0, got {self.clip_c}")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise multiplier and stream seed; per-coordinate base variance is
    sigma^2 C^2 (isotropic diagonal)."""

    sigma: float
    rng_seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma}")

    def base_variance(self, clip_c: float) -> float:
        return self.sigma ** 2 * clip_c ** 2


@dataclass(frozen=True)
class TaskWeights:
    """Per-task importance weights alpha_k in (0, 1]."""

    alpha: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if not self.alpha:
            raise ConfigError("alpha list is empty")
        if any(not (np.isfinite(a) and a > 0) for a in self.alpha):
            raise ConfigError(f"every alpha must be finite and > 0, got {self.alpha}")
        if max(self.alpha) > 1.0:
            raise ConfigError(f"alpha values are capped at 1, got {self.alpha}")


def clip(g: np.ndarray, clip_c: float) -> np.ndarray:
    """g * min(1, C/||g||_2); the zero vector maps to scale factor 1."""
    if not (np.isfinite(clip_c) and clip_c > 0):
        raise ConfigError(f"clip threshold must be finite and > 0, got {clip_c}")
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError("gradient contains non-finite entries")
    norm = float(np.linalg.norm(g))
    if norm <= clip_c * (1.0 + _CLIP_SLACK):
        return g.copy()
    return g * (clip_c / norm)


def allocate_variance(sigma: float, clip_c: float, alpha_k: float) -> float:
    """Per-coordinate noise variance sigma^2 C^2 / alpha_k for task k."""
    if not sigma >= 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if not clip_c > 0:
        raise ConfigError(f"clip threshold must be > 0, got {clip_c}")
    if not alpha_k > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha_k}")
    return sigma ** 2 * clip_c ** 2 / alpha_k


def add_noise(g: np.ndarray, variance: float, key: int) -> np.ndarray:
    """Add iid zero-mean Gaussian noise with the given per-coordinate variance.

    Draws come from the counter-based stream at ``key``; the caller keys it
    by (seed, step, task) so repeated calls are bit-identical and parallel
    schedules cannot reorder draws.  variance = 0 returns the input bits.
    """
    if not variance >= 0:
        raise ConfigError(f"noise variance must be >= 0, got {variance}")
    g = np.asarray(g, dtype=np.float64)
    if variance == 0.0:
        return g.copy()
    return g + np.sqrt(variance) * normals(key, g.size).reshape(g.shape)


@dataclass
class PrivatizedGradient:
    """Clipped, noised, averaged gradient: the unit of privacy-consuming release."""

    task_id: int
    g_hat: np.ndarray
    batch_size: int
    step: int
    applied_variance: float


def privatize_batch(
    grads: Sequence[PerSampleGradient],
    task_id: int,
    clip_c: float,
    sigma: float,
    alpha_k: float,
    key: int,
    step: int = 0,
) -> PrivatizedGradient:
    """Clip each sample, sum in batch order, noise the sum, divide by B."""
    if len(grads) == 0:
        raise UsageError("cannot privatize an empty batch")
    if any(g.task_id != task_id for g in grads):
        raise UsageError("batch mixes gradients from different tasks")
    clipped = np.stack([clip(g.g, clip_c) for g in grads])
    total = np.sum(clipped, axis=0)
    variance = allocate_variance(sigma, clip_c, alpha_k)
    noised = add_noise(total, variance, key)
    batch_size = len(grads)
    return PrivatizedGradient(task_id, noised / batch_size, batch_size, step, variance)
