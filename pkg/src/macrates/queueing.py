"""
Queue evolution, Lyapunov diagnostics and stability verdicts.

Queues hold real-valued nats. Traces are append-only while a run is in
progress and read-only afterwards.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

ARRIVAL_KINDS = ("deterministic", "bernoulli-scaled", "uniform-jitter")


@dataclass(frozen=True)
class QueueVector:
    """Per-user backlogs in nats."""

    backlogs: Tuple[float, ...]

    def __post_init__(self) -> None:
        backlogs = tuple(float(q) for q in self.backlogs)
        if any(not math.isfinite(q) or q < 0 for q in backlogs):
            raise DomainError(f"backlogs must be finite and nonnegative, got {backlogs}")
        object.__setattr__(self, "backlogs", backlogs)

    def __len__(self) -> int:
        return len(self.backlogs)

    def __getitem__(self, index: int) -> float:
        return self.backlogs[index]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.backlogs, dtype=float)

    @classmethod
    def zeros(cls, num_users: int) -> "QueueVector":
        return cls((0.0,) * num_users)

    @property
    def total(self) -> float:
        return math.fsum(self.backlogs)


def queue_update(queue: float, arrival: float, service: float) -> float:
    """Q' = (Q + a - mu)^+."""
    for name, value in (("queue", queue), ("arrival", arrival), ("service", service)):
        if not math.isfinite(value) or value < 0:
            raise DomainError(f"{name} must be finite and nonnegative, got {value!r}")
    return max(queue + arrival - service, 0.0)


def update_queues(queues: np.ndarray, arrivals: np.ndarray, services: np.ndarray) -> np.ndarray:
    """Vectorized :func:`queue_update`."""
    return np.maximum(queues + arrivals - services, 0.0)


def lyapunov_value(queues) -> float:
    """V(Q) = sum_i Q_i^2."""
    values = queues.as_array() if isinstance(queues, QueueVector) else np.asarray(queues, dtype=float)
    return float(values @ values)


@dataclass(frozen=True)
class ArrivalProcess:
    """
    I.i.d. per-slot arrivals with mean ``means[i]`` for user i.

    ``bernoulli-scaled`` delivers ``mean / probability`` with the given probability
    and nothing otherwise; ``uniform-jitter`` delivers ``mean * U(1 - spread, 1 + spread)``.
    """

    kind: str
    means: Tuple[float, ...]
    probability: float = 0.5
    spread: float = 0.5

    def __post_init__(self) -> None:
        errors: List[str] = []
        if self.kind not in ARRIVAL_KINDS:
            errors.append(f"arrivals: unknown kind {self.kind!r}, choose from {ARRIVAL_KINDS}")
        means = tuple(float(m) for m in self.means)
        if any(not math.isfinite(m) or m < 0 for m in means):
            errors.append(f"arrivals: means must be finite and nonnegative, got {means}")
        if not 0 < self.probability <= 1:
            errors.append(f"arrival_probability: must lie in (0, 1], got {self.probability}")
        if not 0 <= self.spread <= 1:
            errors.append(f"arrival_spread: must lie in [0, 1], got {self.spread}")
        if errors:
            raise ConfigurationError(errors)
        object.__setattr__(self, "means", means)

    @property
    def num_users(self) -> int:
        return len(self.means)

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.means, dtype=float)

    @property
    def second_moments(self) -> np.ndarray:
        """E[A_i^2] per user."""
        means = self.mean_array
        if self.kind == "bernoulli-scaled":
            return means**2 / self.probability
        if self.kind == "uniform-jitter":
            return means**2 * (1.0 + self.spread**2 / 3.0)
        return means**2

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        means = self.mean_array
        if self.kind == "bernoulli-scaled":
            hits = rng.random(self.num_users) < self.probability
            return np.where(hits, means / self.probability, 0.0)
        if self.kind == "uniform-jitter":
            return means * rng.uniform(1.0 - self.spread, 1.0 + self.spread, self.num_users)
        return means.copy()


class RunTrace:
    """
    Per-slot records of one simulated path: slot index, joint channel state id,
    queue vector, rates and arrivals, plus running sums of the last three.

    Records live in numpy buffers that double when full.
    """

    def __init__(self, num_users: int, capacity: int = 1024):
        self.num_users = num_users
        self._size = 0
        self._slots = np.empty(capacity, dtype=np.int64)
        self._state_ids = np.empty(capacity, dtype=np.int64)
        self._queues = np.empty((capacity, num_users))
        self._rates = np.empty((capacity, num_users))
        self._arrivals = np.empty((capacity, num_users))
        self.total_queues = np.zeros(num_users)
        self.total_rates = np.zeros(num_users)
        self.total_arrivals = np.zeros(num_users)

    def __len__(self) -> int:
        return self._size

    def _grow(self) -> None:
        capacity = max(2 * self._slots.size, 1)
        for name in ("_slots", "_state_ids", "_queues", "_rates", "_arrivals"):
            old = getattr(self, name)
            new = np.empty((capacity,) + old.shape[1:], dtype=old.dtype)
            new[: self._size] = old[: self._size]
            setattr(self, name, new)

    def append(self, slot: int, state_id: int, queues, rates, arrivals) -> None:
        if self._size == self._slots.size:
            self._grow()
        k = self._size
        self._slots[k] = slot
        self._state_ids[k] = state_id
        self._queues[k] = queues
        self._rates[k] = rates
        self._arrivals[k] = arrivals
        self.total_queues += self._queues[k]
        self.total_rates += self._rates[k]
        self.total_arrivals += self._arrivals[k]
        self._size += 1

    @classmethod
    def from_queues(cls, queues) -> "RunTrace":
        """A trace carrying only a queue path (one row per slot; 1-D input is one user)."""
        matrix = np.asarray(queues, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        length, num_users = matrix.shape
        trace = cls(num_users, capacity=max(length, 1))
        trace._slots[:length] = np.arange(length)
        trace._state_ids[:length] = 0
        trace._queues[:length] = matrix
        trace._rates[:length] = 0.0
        trace._arrivals[:length] = 0.0
        trace._size = length
        trace.total_queues = matrix.sum(axis=0)
        return trace

    @property
    def slots(self) -> np.ndarray:
        return self._slots[: self._size]

    @property
    def state_ids(self) -> np.ndarray:
        return self._state_ids[: self._size]

    def queue_matrix(self) -> np.ndarray:
        return self._queues[: self._size]

    def rate_matrix(self) -> np.ndarray:
        return self._rates[: self._size]

    def arrival_matrix(self) -> np.ndarray:
        return self._arrivals[: self._size]

    def mean_queues(self) -> np.ndarray:
        return self.total_queues / max(len(self), 1)

    def average_rates(self) -> np.ndarray:
        return self.total_rates / max(len(self), 1)

    def accumulators_consistent(self, tol: float = 1e-6) -> bool:
        return (
            np.allclose(self.queue_matrix().sum(axis=0), self.total_queues, rtol=tol, atol=tol)
            and np.allclose(self.rate_matrix().sum(axis=0), self.total_rates, rtol=tol, atol=tol)
            and np.allclose(self.arrival_matrix().sum(axis=0), self.total_arrivals, rtol=tol, atol=tol)
        )


def _subset_columns(trace: RunTrace, subset: Optional[Iterable[int]]) -> np.ndarray:
    matrix = trace.queue_matrix()
    if subset is None:
        return matrix
    members = sorted(set(int(i) for i in subset))
    if not members or any(not 0 <= i < trace.num_users for i in members):
        raise DomainError(f"subset {members} is not a nonempty set of users of the trace")
    return matrix[:, members]


def _least_squares(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Slope and intercept of the degree-one fit; a flat ``x`` has slope 0."""
    if np.ptp(x) == 0.0:
        return 0.0, float(np.mean(y))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class DriftEstimate:
    """
    Paired samples (sum_i Q_i(t), V(Q(t+T)) - V(Q(t))) over every anchor t and
    their least-squares line.
    """

    horizon: int
    sum_queues: np.ndarray = field(repr=False)
    drifts: np.ndarray = field(repr=False)
    slope: float
    intercept: float


def empirical_drift(trace: RunTrace, horizon: int, subset: Optional[Iterable[int]] = None) -> DriftEstimate:
    """
    Raises:
        DomainError: if ``horizon < 1`` or the trace has no more than ``horizon`` slots.
    """
    if horizon < 1:
        raise DomainError(f"drift horizon must be at least 1, got {horizon}")
    if len(trace) <= horizon:
        raise DomainError(f"trace of {len(trace)} slots is too short for horizon {horizon}")
    queues = _subset_columns(trace, subset)
    energy = np.einsum("ij,ij->i", queues, queues)
    sums = queues.sum(axis=1)[:-horizon]
    drifts = energy[horizon:] - energy[:-horizon]
    slope, intercept = _least_squares(sums, drifts)
    return DriftEstimate(horizon, sums, drifts, slope, intercept)


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    growth_slope: float
    mean_sum_queue: float
    threshold: float

    @property
    def label(self) -> str:
        return "stable" if self.stable else "unstable"

    def __str__(self) -> str:
        if self.stable:
            return f"stable (time-average queue {self.mean_sum_queue:.6g})"
        return f"unstable (growth slope {self.growth_slope:.6g} nats/slot)"


def stability_verdict(
    trace: RunTrace,
    subset: Optional[Iterable[int]] = None,
    slope_threshold: float = 1e-3,
    min_slots: int = 10_000,
) -> StabilityVerdict:
    """
    Fits a line to sum_{i in S} Q_i(t) over the last half of the trace; the
    path is unstable when the slope exceeds ``slope_threshold``.

    Sublinear growth (Q ~ sqrt(t)) still yields a positive fitted slope that only
    falls below the threshold once the trace is long enough.

    Raises:
        DomainError: if the trace is shorter than ``min_slots``.
    """
    if len(trace) < min_slots:
        raise DomainError(f"stability verdict needs at least {min_slots} slots, got {len(trace)}")
    totals = _subset_columns(trace, subset).sum(axis=1)
    half = len(totals) // 2
    tail = totals[half:]
    slope, _ = _least_squares(np.arange(tail.size, dtype=float), tail)
    mean_sum_queue = float(np.mean(totals))
    return StabilityVerdict(slope <= slope_threshold, slope, mean_sum_queue, slope_threshold)
