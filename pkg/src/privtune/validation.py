"""Input validation helpers for the estimator surface."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def check_feature_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"X must be a nonempty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite entries")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"y has shape {y.shape}, expected ({n_samples},)")
    return y


def check_tasks(tasks, n_samples: int) -> np.ndarray:
    """Task ids default to a single task; otherwise must be 0..K-1 with
    every task represented."""
    if tasks is None:
        return np.zeros(n_samples, dtype=np.int64)
    tasks = np.asarray(tasks, dtype=np.int64)
    if tasks.shape != (n_samples,):
        raise ValueError(f"tasks has shape {tasks.shape}, expected ({n_samples},)")
    if tasks.min() < 0:
        raise ValueError("task ids must be >= 0")
    num_tasks = int(tasks.max()) + 1
    present = np.unique(tasks)
    if len(present) != num_tasks:
        missing = sorted(set(range(num_tasks)) - set(present.tolist()))
        raise ValueError(f"task ids must cover 0..{num_tasks - 1}; missing {missing}")
    return tasks


def check_alpha(alpha, num_tasks: int) -> tuple[float, ...]:
    if alpha is None:
        return (1.0,) * num_tasks
    alpha = tuple(float(a) for a in np.atleast_1d(alpha))
    if len(alpha) == 1:
        alpha = alpha * num_tasks
    if len(alpha) != num_tasks:
        raise ConfigError(f"alpha has {len(alpha)} entries for {num_tasks} tasks")
    return alpha
