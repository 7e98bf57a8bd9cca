"""Frozen two-layer tanh backbone with per-task heads and a low-rank
trainable subspace.

The backbone never changes after initialization.  All training happens in
a vector ``u`` of dimension ``m``: low-rank factors (A, B) attached to the
two hidden weight matrices, plus optional per-task head deltas.  The
realized parameter delta is ``W + B @ A`` per target, so the update lives
in the span of the factor directions while ``m`` stays far below the
backbone parameter count.

Gradients with respect to ``u`` are exact (chain rule through the factor
products) and are checked against the central finite-difference oracle in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .rng import derive_key, fnv1a_64, normals

ADAPTER_A_INIT_SCALE = 0.01


@dataclass(frozen=True)
class BackboneSpec:
    """Geometry and seed of the frozen network."""

    input_dim: int
    hidden_dim: int
    num_tasks: int
    classes_per_task: tuple[int, ...]
    init_seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "classes_per_task", tuple(int(c) for c in self.classes_per_task))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if len(self.classes_per_task) != self.num_tasks:
            raise ConfigError(
                f"classes_per_task has {len(self.classes_per_task)} entries for {self.num_tasks} tasks"
            )
        if any(c < 2 for c in self.classes_per_task):
            raise ConfigError(f"every task needs >= 2 classes, got {self.classes_per_task}")
        if self.activation != "tanh":
            raise ConfigError(f"activation is fixed to tanh, got {self.activation!r}")

    @property
    def total_params(self) -> int:
        d, h = self.input_dim, self.hidden_dim
        heads = sum(c * h + c for c in self.classes_per_task)
        return (h * d + h) + (h * h + h) + heads


@dataclass(frozen=True)
class ProjectionSpec:
    """Rank and reach of the trainable subspace.

    Low-rank deltas always target W1 and W2 (in that order); head deltas
    are included when ``heads_trainable``.
    """

    rank: int
    heads_trainable: bool = True

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")

    def subspace_dim(self, spec: BackboneSpec) -> int:
        d, h = spec.input_dim, spec.hidden_dim
        m = self.rank * (d + h) + self.rank * (h + h)
        if self.heads_trainable:
            m += sum(c * (h + 1) for c in spec.classes_per_task)
        return m


def trainable_fraction(spec: BackboneSpec, proj: ProjectionSpec) -> float:
    """Trainable coordinate count over frozen parameter count."""
    m = proj.subspace_dim(spec)
    total = spec.total_params
    if m >= total:
        raise ConfigError(f"subspace dim {m} must stay below parameter count {total}")
    return m / total


@dataclass
class FrozenParams:
    """Immutable backbone weights; arrays are write-protected."""

    spec: BackboneSpec
    w1: np.ndarray  # (h, d_in)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, h)
    b2: np.ndarray  # (h,)
    heads: tuple[tuple[np.ndarray, np.ndarray], ...]  # per task: (C_k, h), (C_k,)

    def __post_init__(self):
        for arr in self._arrays():
            arr.flags.writeable = False

    def _arrays(self):
        yield self.w1
        yield self.b1
        yield self.w2
        yield self.b2
        for w, b in self.heads:
            yield w
            yield b

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self._arrays())

    def checksum(self) -> int:
        """64-bit FNV-1a over the little-endian float64 stream, declaration order."""
        stream = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self._arrays())
        return fnv1a_64(stream)


def init_backbone(spec: BackboneSpec) -> FrozenParams:
    """Draw frozen weights, scale 1/sqrt(fan_in), zero biases, keyed by init_seed."""
    d, h = spec.input_dim, spec.hidden_dim
    w1 = normals(derive_key(spec.init_seed, "backbone-w1"), h * d).reshape(h, d) / np.sqrt(d)
    w2 = normals(derive_key(spec.init_seed, "backbone-w2"), h * h).reshape(h, h) / np.sqrt(h)
    b1 = np.zeros(h)
    b2 = np.zeros(h)
    heads = []
    for k, c in enumerate(spec.classes_per_task):
        hw = normals(derive_key(spec.init_seed, "backbone-head", k), c * h).reshape(c, h) / np.sqrt(h)
        heads.append((hw, np.zeros(c)))
    return FrozenParams(spec, w1, b1, w2, b2, tuple(heads))


class AdapterState:
    """The trainable vector ``u`` plus factor views into it.

    Layout of ``u`` (contiguous, covering all m coordinates):
    A1 (r x d_in), B1 (h x r), A2 (r x h), B2 (h x r), then per task
    head-weight delta (C_k x h) and head-bias delta (C_k,) when heads are
    trainable.  Views share memory with ``u``; mutating ``u`` mutates them.
    """

    def __init__(self, spec: BackboneSpec, proj: ProjectionSpec, u: np.ndarray | None = None):
        self.spec = spec
        self.proj = proj
        m = proj.subspace_dim(spec)
        if m >= spec.total_params:
            raise ConfigError(f"subspace dim {m} must stay below parameter count {spec.total_params}")
        if u is None:
            u = np.zeros(m)
        else:
            u = np.asarray(u, dtype=np.float64)
            if u.shape != (m,):
                raise ShapeError(f"u has shape {u.shape}, expected ({m},)")
        self.u = u
        d, h, r = spec.input_dim, spec.hidden_dim, proj.rank
        pos = 0

        def view(count, shape):
            nonlocal pos
            v = self.u[pos:pos + count].reshape(shape)
            pos += count
            return v

        self.a1 = view(r * d, (r, d))
        self.b1 = view(h * r, (h, r))
        self.a2 = view(r * h, (r, h))
        self.b2 = view(h * r, (h, r))
        self.head_w = []
        self.head_b = []
        if proj.heads_trainable:
            for c in spec.classes_per_task:
                self.head_w.append(view(c * h, (c, h)))
                self.head_b.append(view(c, (c,)))
        assert pos == m

    @property
    def dim(self) -> int:
        return self.u.size

    def copy(self) -> "AdapterState":
        return AdapterState(self.spec, self.proj, self.u.copy())


def init_adapter(spec: BackboneSpec, proj: ProjectionSpec, seed: int) -> AdapterState:
    """B factors and head deltas start at zero, A factors small Gaussian.

    With B = 0 the realized delta is zero, so training starts exactly at
    the frozen backbone.
    """
    adapter = AdapterState(spec, proj)
    adapter.a1[:] = ADAPTER_A_INIT_SCALE * normals(derive_key(seed, "adapter-a1"), adapter.a1.size).reshape(adapter.a1.shape)
    adapter.a2[:] = ADAPTER_A_INIT_SCALE * normals(derive_key(seed, "adapter-a2"), adapter.a2.size).reshape(adapter.a2.shape)
    return adapter


@dataclass
class EffectiveParams:
    """Backbone plus realized adapter delta; carries its inputs so gradient
    and oracle code can rebuild perturbed versions."""

    frozen: FrozenParams
    adapter: AdapterState
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    heads: tuple[tuple[np.ndarray, np.ndarray], ...]


def project_update(frozen: FrozenParams, adapter: AdapterState) -> EffectiveParams:
    """Realize theta' = theta + P(u); the frozen parameters are untouched."""
    spec = frozen.spec
    if adapter.spec != spec:
        raise ShapeError("adapter was built for a different backbone spec")
    w1 = frozen.w1 + adapter.b1 @ adapter.a1
    w2 = frozen.w2 + adapter.b2 @ adapter.a2
    heads = []
    for k, (hw, hb) in enumerate(frozen.heads):
        if adapter.proj.heads_trainable:
            heads.append((hw + adapter.head_w[k], hb + adapter.head_b[k]))
        else:
            heads.append((hw, hb))
    return EffectiveParams(frozen, adapter, w1, frozen.b1, w2, frozen.b2, tuple(heads))


def forward(theta: EffectiveParams, x: np.ndarray, task_id: int) -> np.ndarray:
    """Logits of one sample for one task head."""
    spec = theta.frozen.spec
    if not 0 <= task_id < spec.num_tasks:
        raise IndexError(f"task_id {task_id} out of range for {spec.num_tasks} tasks")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.input_dim,):
        raise ShapeError(f"x has shape {x.shape}, expected ({spec.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite entries")
    a1 = np.tanh(theta.w1 @ x + theta.b1)
    a2 = np.tanh(theta.w2 @ a1 + theta.b2)
    hw, hb = theta.heads[task_id]
    return hw @ a2 + hb


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def sample_loss(theta: EffectiveParams, record) -> float:
    """Cross-entropy of one record under theta'."""
    logits = forward(theta, record.features, record.task_id)
    c = logits.size
    if not 0 <= record.label < c:
        raise ValueError(f"label {record.label} out of range for {c} classes")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[record.label])


@dataclass
class PerSampleGradient:
    """Gradient of one sample's loss with respect to u."""

    sample_index: int
    task_id: int
    g: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.g)):
            raise NumericError(f"non-finite gradient for sample {self.sample_index}")


def per_sample_grad(theta: EffectiveParams, record, sample_index: int = 0) -> PerSampleGradient:
    """Exact gradient of the per-sample cross-entropy with respect to u."""
    spec = theta.frozen.spec
    adapter = theta.adapter
    k = record.task_id
    x = np.asarray(record.features, dtype=np.float64)
    if not 0 <= k < spec.num_tasks:
        raise IndexError(f"task_id {k} out of range for {spec.num_tasks} tasks")
    if x.shape != (spec.input_dim,):
        raise ShapeError(f"features have shape {x.shape}, expected ({spec.input_dim},)")

    z1 = theta.w1 @ x + theta.b1
    a1 = np.tanh(z1)
    z2 = theta.w2 @ a1 + theta.b2
    a2 = np.tanh(z2)
    hw, hb = theta.heads[k]
    logits = hw @ a2 + hb
    if not 0 <= record.label < logits.size:
        raise ValueError(f"label {record.label} out of range for {logits.size} classes")
    p = _softmax(logits)
    d_logits = p.copy()
    d_logits[record.label] -= 1.0

    d_a2 = hw.T @ d_logits
    d_z2 = (1.0 - a2 * a2) * d_a2
    d_w2 = np.outer(d_z2, a1)
    d_a1 = theta.w2.T @ d_z2
    d_z1 = (1.0 - a1 * a1) * d_a1
    d_w1 = np.outer(d_z1, x)

    out = AdapterState(spec, adapter.proj)
    out.a1[:] = adapter.b1.T @ d_w1
    out.b1[:] = d_w1 @ adapter.a1.T
    out.a2[:] = adapter.b2.T @ d_w2
    out.b2[:] = d_w2 @ adapter.a2.T
    if adapter.proj.heads_trainable:
        out.head_w[k][:] = np.outer(d_logits, a2)
        out.head_b[k][:] = d_logits
    grad = out.u
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for sample {sample_index}")
    return PerSampleGradient(sample_index, k, grad)


def finite_diff_grad(theta: EffectiveParams, record, step: float) -> np.ndarray:
    """Central-difference estimate of d loss / d u, coordinate by coordinate."""
    if not step > 0:
        raise ConfigError(f"finite-difference step must be > 0, got {step}")
    adapter = theta.adapter
    frozen = theta.frozen
    grad = np.zeros(adapter.dim)
    for j in range(adapter.dim):
        probe = adapter.copy()
        probe.u[j] += step
        up = sample_loss(project_update(frozen, probe), record)
        probe.u[j] -= 2.0 * step
        down = sample_loss(project_update(frozen, probe), record)
        grad[j] = (up - down) / (2.0 * step)
    return grad


