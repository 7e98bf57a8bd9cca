"""Scikit-learn style facade over the DP adapter trainer.

``DPAdapterClassifier`` exposes the whole pipeline (frozen backbone,
low-rank subspace updates, per-sample clipping, adaptive per-task noise,
RDP accounting) as a fit/predict estimator so it composes with the usual
tooling (``get_params``/``set_params``, ``clone``, pipelines).  Multi-task
data is passed as an extra ``tasks`` vector; without it everything is one
task.  Labels may be arbitrary values; they are encoded per task.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import Dataset, InstructionRecord
from .errors import ConfigError
from .model import forward
from .training import DEFAULT_HIDDEN_DIM, DEFAULT_RANK, TrainConfig, train
from .validation import check_alpha, check_feature_matrix, check_labels, check_tasks


class DPAdapterClassifier(BaseEstimator, ClassifierMixin):
    """Differentially private multi-task classifier trained in a low-rank
    adapter subspace of a frozen random-feature backbone.

    Parameters mirror the training config: ``sigma`` is the noise
    multiplier (0 disables DP noise and reports epsilon = inf), ``clip_c``
    the per-sample gradient clipping threshold, ``alpha`` the per-task
    importance weights in (0, 1], ``lambda1``/``lambda2`` the delta-norm
    and gradient-KL penalty weights.

    After ``fit``: ``epsilon_`` holds the overall privacy budget at
    ``delta``, ``privacy_report_`` the per-task breakdown, ``metrics_``
    the training metrics rows, and ``trainable_fraction_`` the trainable
    parameter share.
    """

    def __init__(
        self,
        learning_rate: float = 0.1,
        batch_size: int = 16,
        steps: int = 200,
        clip_c: float = 1.0,
        sigma: float = 0.0,
        alpha=None,
        lambda1: float = 0.0,
        lambda2: float = 0.0,
        delta: float = 1e-5,
        eval_every: int = 50,
        composition: str = "parallel",
        controller: float = 0.0,
        hidden_dim: int = DEFAULT_HIDDEN_DIM,
        rank: int = DEFAULT_RANK,
        heads_trainable: bool = True,
        seed: int = 0,
    ):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.steps = steps
        self.clip_c = clip_c
        self.sigma = sigma
        self.alpha = alpha
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.delta = delta
        self.eval_every = eval_every
        self.composition = composition
        self.controller = controller
        self.hidden_dim = hidden_dim
        self.rank = rank
        self.heads_trainable = heads_trainable
        self.seed = seed

    def fit(self, X, y, tasks=None):
        X = check_feature_matrix(X)
        y = check_labels(y, X.shape[0])
        tasks = check_tasks(tasks, X.shape[0])
        num_tasks = int(tasks.max()) + 1

        self.classes_per_task_ = []
        encoded = np.zeros(X.shape[0], dtype=np.int64)
        for k in range(num_tasks):
            mask = tasks == k
            classes = np.unique(y[mask])
            if classes.size < 2:
                raise ConfigError(f"task {k} has {classes.size} distinct labels; need >= 2")
            self.classes_per_task_.append(classes)
            encoded[mask] = np.searchsorted(classes, y[mask])
        self.classes_ = (self.classes_per_task_[0] if num_tasks == 1
                         else np.unique(y))
        self.n_features_in_ = X.shape[1]

        records = [
            InstructionRecord(int(tasks[i]), int(encoded[i]), X[i], int(encoded[i]))
            for i in range(X.shape[0])
        ]
        dataset = Dataset(
            input_dim=X.shape[1],
            classes_per_task=tuple(c.size for c in self.classes_per_task_),
            train=records,
            eval=records,
        )
        config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            steps=self.steps,
            clip_c=self.clip_c,
            sigma=self.sigma,
            alpha=check_alpha(self.alpha, num_tasks),
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            delta=self.delta,
            seed=self.seed,
            eval_every=self.eval_every,
            composition=self.composition,
            controller=self.controller,
            hidden_dim=self.hidden_dim,
            rank=self.rank,
            heads_trainable=self.heads_trainable,
        )
        result = train(config, dataset)
        self.result_ = result
        self.theta_ = result.final_theta
        self.adapter_ = result.adapter
        self.metrics_ = result.metrics
        self.privacy_report_ = result.privacy_report
        self.epsilon_ = result.privacy_report.overall_eps
        self.trainable_fraction_ = result.trainable_fraction
        return self

    def decision_function(self, X, tasks=None):
        """Per-sample logits; requires a uniform class count across the
        queried tasks."""
        self._check_fitted()
        X = check_feature_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        tasks = check_tasks(tasks, X.shape[0]) if tasks is not None else np.zeros(X.shape[0], dtype=np.int64)
        widths = {self.classes_per_task_[int(k)].size for k in np.unique(tasks)}
        if len(widths) != 1:
            raise ValueError("decision_function needs tasks with equal class counts")
        return np.stack([forward(self.theta_, X[i], int(tasks[i])) for i in range(X.shape[0])])

    def predict(self, X, tasks=None):
        self._check_fitted()
        X = check_feature_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if tasks is None:
            tasks = np.zeros(X.shape[0], dtype=np.int64)
        else:
            tasks = np.asarray(tasks, dtype=np.int64)
        out = []
        for i in range(X.shape[0]):
            k = int(tasks[i])
            if not 0 <= k < len(self.classes_per_task_):
                raise ValueError(f"task id {k} outside the fitted {len(self.classes_per_task_)} tasks")
            logits = forward(self.theta_, X[i], k)
            out.append(self.classes_per_task_[k][int(np.argmax(logits))])
        return np.asarray(out)

    def score(self, X, y, tasks=None, sample_weight=None):
        predictions = self.predict(X, tasks)
        y = check_labels(y, predictions.shape[0])
        hits = (predictions == y).astype(np.float64)
        if sample_weight is not None:
            return float(np.average(hits, weights=sample_weight))
        return float(np.mean(hits))

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise ConfigError("estimator is not fitted; call fit first")
