"""Renyi-DP accounting for the noised gradient releases.

Each release for task k is a Gaussian mechanism with sensitivity C and
noise std (sigma/sqrt(alpha_k)) * C, i.e. effective multiplier
sigma_eff = sigma / sqrt(alpha_k).  Per-step RDP composes additively per
task; conversion to (eps, delta) takes the minimum over a fixed order
grid of  eps_rdp(a) + log(1/delta)/(a - 1).

Minibatch subsampling is modeled as Poisson sampling at rate q = B/N
(the trainer actually draws fixed-size batches; reports carry the
standard ``poisson_approx`` tag).  Subsampled RDP uses the exact
integer-order binomial expansion

    (1/(a-1)) * log( sum_{i=0}^{a} C(a,i) (1-q)^(a-i) q^i
                     * exp(i(i-1) / (2 sigma_eff^2)) )

evaluated in log space.  Fractional orders are supported only for
unsampled releases (q = 1); at q < 1 they accumulate +inf and simply
never win the conversion minimum.

Tasks draw their batches from disjoint per-task datasets, so the default
overall budget is the per-task maximum (parallel composition); a
``sequential`` switch sums instead for shared-data deployments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError, UsageError

# 32 orders spanning 1.25-512: dyadic fractions near 1 where the
# conversion penalty term dominates, integers and powers of two above.
DEFAULT_ORDERS: tuple[float, ...] = (
    1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 3.5, 4.0, 4.5,
    5.0, 5.5, 6.0, 6.5, 7.0, 8.0, 9.0, 10.0, 12.0, 14.0,
    16.0, 20.0, 24.0, 28.0, 32.0, 48.0, 64.0, 96.0, 128.0,
    192.0, 256.0, 512.0,
)

SAMPLING_MODEL = "poisson_approx"


def effective_sigma(sigma: float, alpha_k: float) -> float:
    """Noise multiplier governing task k's mechanism: sigma / sqrt(alpha_k)."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0 for accounting, got {sigma}")
    if not 0 < alpha_k <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha_k}")
    return sigma / math.sqrt(alpha_k)


def rdp_gaussian(order: float, sigma_eff: float) -> float:
    """RDP of the unsampled Gaussian mechanism: order / (2 sigma_eff^2)."""
    if not order > 1:
        raise ConfigError(f"RDP order must be > 1, got {order}")
    if not sigma_eff > 0:
        raise ConfigError(f"sigma_eff must be > 0, got {sigma_eff}")
    return order / (2.0 * sigma_eff ** 2)


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _logsumexp(values) -> float:
    top = max(values)
    if top == -math.inf:
        return -math.inf
    return top + math.log(sum(math.exp(v - top) for v in values))


def rdp_subsampled_gaussian(order: float, sigma_eff: float, q: float) -> float:
    """RDP of the Poisson-subsampled Gaussian at an integer order >= 2."""
    if not 0 <= q <= 1:
        raise ConfigError(f"sampling rate must lie in [0, 1], got {q}")
    if not sigma_eff > 0:
        raise ConfigError(f"sigma_eff must be > 0, got {sigma_eff}")
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return rdp_gaussian(order, sigma_eff)
    if order != int(order) or order < 2:
        raise ConfigError(f"subsampled RDP needs an integer order >= 2, got {order}")
    a = int(order)
    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    inv = 1.0 / (2.0 * sigma_eff ** 2)
    terms = [
        _log_comb(a, i) + i * log_q + (a - i) * log_1mq + i * (i - 1) * inv
        for i in range(a + 1)
    ]
    return _logsumexp(terms) / (a - 1)


def _per_step_rdp(order: float, sigma_eff: float, q: float) -> float:
    """Per-step RDP at one order; +inf marks orders unusable at this q."""
    if q == 1.0:
        return rdp_gaussian(order, sigma_eff)
    if order != int(order) or order < 2:
        return math.inf
    return rdp_subsampled_gaussian(order, sigma_eff, q)


@dataclass(frozen=True)
class AccountantConfig:
    orders: tuple[float, ...] = DEFAULT_ORDERS
    delta: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(float(o) for o in self.orders))
        if not self.orders:
            raise ConfigError("order set is empty")
        if any(o <= 1 for o in self.orders):
            raise ConfigError("all RDP orders must be > 1")
        if list(self.orders) != sorted(self.orders):
            raise ConfigError("orders must be ascending")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")


class RdpLedger:
    """Accumulated Renyi epsilon per task per order, plus step counters.

    Steps are stored as (sigma_eff, q) -> count so that T identical steps
    yield exactly T times the single-step RDP (one multiply, no drift from
    repeated float addition).
    """

    def __init__(self, num_tasks: int, orders: tuple[float, ...] = DEFAULT_ORDERS):
        if num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {num_tasks}")
        self.orders = AccountantConfig(orders=orders).orders
        self.num_tasks = num_tasks
        self._counts: list[dict[tuple[float, float], int]] = [{} for _ in range(num_tasks)]
        self._per_step_cache: dict[tuple[float, float, float], float] = {}

    @property
    def steps(self) -> list[int]:
        return [sum(c.values()) for c in self._counts]

    def record_step(self, task_id: int, sigma_eff: float, q: float) -> None:
        """Add one release's RDP to task_id's column at every order."""
        if not 0 <= task_id < self.num_tasks:
            raise UsageError(f"unknown task {task_id} for ledger with {self.num_tasks} tasks")
        if not sigma_eff > 0:
            raise ConfigError(f"sigma_eff must be > 0, got {sigma_eff}")
        if not 0 < q <= 1:
            raise ConfigError(f"sampling rate must lie in (0, 1], got {q}")
        counts = self._counts[task_id]
        kind = (float(sigma_eff), float(q))
        counts[kind] = counts.get(kind, 0) + 1

    def _per_step(self, order: float, sigma_eff: float, q: float) -> float:
        cache_key = (order, sigma_eff, q)
        value = self._per_step_cache.get(cache_key)
        if value is None:
            value = _per_step_rdp(order, sigma_eff, q)
            self._per_step_cache[cache_key] = value
        return value

    def rdp_at(self, task_id: int) -> list[float]:
        """Accumulated eps_k(order) for every order in the grid."""
        if not 0 <= task_id < self.num_tasks:
            raise UsageError(f"unknown task {task_id} for ledger with {self.num_tasks} tasks")
        totals = []
        for order in self.orders:
            total = 0.0
            for (sigma_eff, q), count in self._counts[task_id].items():
                total += count * self._per_step(order, sigma_eff, q)
            totals.append(total)
        return totals


@dataclass
class PrivacyReport:
    """Per-task and overall (eps, delta) at the optimal order."""

    task_eps: tuple[float, ...]
    task_order: tuple[float, ...]
    overall_eps: float
    delta: float
    composition: str
    sampling_model: str = SAMPLING_MODEL
    task_steps: tuple[int, ...] = field(default_factory=tuple)


def to_eps_delta(ledger: RdpLedger, delta: float, composition: str = "parallel") -> PrivacyReport:
    """Convert accumulated RDP to (eps, delta) per task and overall.

    Per task: eps = min over orders of [eps_rdp(a) + log(1/delta)/(a-1)].
    Overall: max across tasks under parallel composition (disjoint
    per-task data), sum under sequential.
    """
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    if composition not in ("parallel", "sequential"):
        raise ConfigError(f"composition must be parallel or sequential, got {composition!r}")
    if not ledger.orders:
        raise ConfigError("order set is empty")
    log_inv_delta = math.log(1.0 / delta)
    task_eps = []
    task_order = []
    for k in range(ledger.num_tasks):
        best = math.inf
        best_order = ledger.orders[-1]
        for order, eps_rdp in zip(ledger.orders, ledger.rdp_at(k)):
            candidate = eps_rdp + log_inv_delta / (order - 1.0)
            if candidate < best:
                best = candidate
                best_order = order
        task_eps.append(best)
        task_order.append(best_order)
    if composition == "parallel":
        overall = max(task_eps)
    else:
        overall = sum(task_eps)
    return PrivacyReport(
        task_eps=tuple(task_eps),
        task_order=tuple(task_order),
        overall_eps=overall,
        delta=delta,
        composition=composition,
        task_steps=tuple(ledger.steps),
    )


def audit_report(
    sigma: float,
    alpha: tuple[float, ...],
    batch_size: int,
    n_per_task: tuple[int, ...],
    steps: int,
    delta: float,
    composition: str = "parallel",
    orders: tuple[float, ...] = DEFAULT_ORDERS,
) -> PrivacyReport:
    """Accountant run for a hypothetical training config, without training."""
    num_tasks = len(alpha)
    if len(n_per_task) != num_tasks:
        raise ConfigError(
            f"n_per_task has {len(n_per_task)} entries for {num_tasks} tasks"
        )
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if sigma == 0.0:
        inf = (math.inf,) * num_tasks
        return PrivacyReport(inf, (math.nan,) * num_tasks, math.inf, delta,
                             composition, task_steps=(steps,) * num_tasks)
    ledger = RdpLedger(num_tasks, orders)
    for k in range(num_tasks):
        if batch_size > n_per_task[k]:
            raise ConfigError(
                f"batch_size {batch_size} exceeds task {k} dataset size {n_per_task[k]}"
            )
        sig_eff = effective_sigma(sigma, alpha[k])
        q = batch_size / n_per_task[k]
        for _ in range(steps):
            ledger.record_step(k, sig_eff, q)
    return to_eps_delta(ledger, delta, composition)
