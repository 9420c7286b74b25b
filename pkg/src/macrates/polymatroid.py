"""
Optimization over a polymatroid described by its rank function.

The multiple-access capacity regions are polymatroids: for a normalized,
monotone, submodular rank function f the region is
``{R >= 0 : sum_{i in S} R_i <= f(S) for all S}``. Linear objectives are
maximized exactly by the greedy vertex construction, which in turn serves as
the linear oracle of the Frank-Wolfe solver used for concave objectives.
"""

import itertools
import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .capacity import (
    TOLERANCE,
    ChannelState,
    MacConfig,
    RateVector,
    instantaneous_rank,
    throughput_rank,
)
from .exceptions import DomainError, SolverError
from .utility import Utility

logger = logging.getLogger(__name__)

MAX_VALIDATION_ARITY = 10
MAX_SCAN_ARITY = 20

Subset = FrozenSet[int]


class RankOracle:
    """
    A set function S -> f(S) in nats per slot over users ``0..arity-1``.

    Values are memoized; the memo is guarded by a lock so one oracle can be
    shared by concurrent solver calls.
    """

    def __init__(self, arity: int, evaluate: Callable[[Subset], float], label: str = "rank"):
        if arity < 1:
            raise DomainError(f"oracle arity must be positive, got {arity}")
        self.arity = int(arity)
        self.label = label
        self._evaluate = evaluate
        self._cache: Dict[Subset, float] = {}
        self._mask_values: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"RankOracle({self.label!r}, arity={self.arity})"

    def __call__(self, subset: Iterable[int]) -> float:
        key = subset if isinstance(subset, frozenset) else frozenset(subset)
        value = self._cache.get(key)
        if value is None:
            for i in key:
                if not 0 <= i < self.arity:
                    raise DomainError(f"user index {i} out of range for arity {self.arity}")
            value = 0.0 if not key else float(self._evaluate(key))
            with self._lock:
                self._cache[key] = value
        return value

    def mask_values(self) -> np.ndarray:
        """f evaluated at every subset, indexed by bitmask (bit i set means user i is in S)."""
        if self._mask_values is None:
            values = np.empty(1 << self.arity)
            for mask in range(1 << self.arity):
                members = frozenset(i for i in range(self.arity) if mask >> i & 1)
                values[mask] = 0.0 if not members else float(self._evaluate(members))
            with self._lock:
                self._mask_values = values
        return self._mask_values

    def restrict(self, users: Sequence[int]) -> "RankOracle":
        """Rank function of the sub-channel formed by ``users`` (renumbered from 0)."""
        users = tuple(int(u) for u in users)
        if not users or len(set(users)) != len(users):
            raise DomainError(f"restriction needs distinct users, got {users}")
        for u in users:
            if not 0 <= u < self.arity:
                raise DomainError(f"user index {u} out of range for arity {self.arity}")
        return RankOracle(
            len(users),
            lambda subset: self(frozenset(users[i] for i in subset)),
            label=f"{self.label}|{users}",
        )

    @classmethod
    def for_channel(cls, config: MacConfig, state: ChannelState) -> "RankOracle":
        """Rank function of the instantaneous region at one channel state."""
        return cls(
            config.num_users,
            lambda subset: instantaneous_rank(config, state, subset),
            label=f"instantaneous{state.gains}",
        )

    @classmethod
    def for_fading(cls, config: MacConfig, fading) -> "RankOracle":
        """Rank function of the throughput region of a fading process."""
        return cls(
            config.num_users,
            lambda subset: throughput_rank(config, fading, subset),
            label="throughput",
        )


@dataclass(frozen=True)
class VertexAllocation:
    """Successive-decoding rate point of one user ordering."""

    permutation: Tuple[int, ...]
    rates: RateVector


@dataclass(frozen=True)
class Violation:
    kind: str
    first: Subset
    second: Subset
    amount: float

    def __str__(self) -> str:
        return (
            f"{self.kind} violated by {self.amount:.3g} for "
            f"S={sorted(self.first)}, T={sorted(self.second)}"
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class ConcaveSolution:
    """Result of :func:`maximize_concave` with its Frank-Wolfe duality gap."""

    rates: RateVector
    gap: float
    iterations: int
    converged: bool


def _members(mask: int) -> Subset:
    return frozenset(i for i in range(mask.bit_length()) if mask >> i & 1)


def _subset_sums(point: np.ndarray) -> np.ndarray:
    """sum_{i in S} point_i for every bitmask S."""
    sums = np.zeros(1 << len(point))
    for i, value in enumerate(point):
        width = 1 << i
        sums[width : 2 * width] = sums[:width] + value
    return sums


def validate_polymatroid(oracle: RankOracle, tol: float = TOLERANCE) -> ValidationReport:
    """
    Checks normalization, monotonicity and submodularity on every subset pair.

    Raises:
        DomainError: if the oracle has more than ``MAX_VALIDATION_ARITY`` users.
    """
    if oracle.arity > MAX_VALIDATION_ARITY:
        raise DomainError(
            f"exhaustive validation needs arity <= {MAX_VALIDATION_ARITY}, got {oracle.arity}"
        )
    values = oracle.mask_values()
    masks = np.arange(values.size)
    violations: List[Violation] = []

    if abs(values[0]) > tol:
        violations.append(Violation("normalization", frozenset(), frozenset(), abs(values[0])))

    for s in range(values.size):
        supersets = masks[(masks & s) == s]
        drops = values[s] - values[supersets]
        for t in supersets[drops > tol]:
            violations.append(
                Violation("monotonicity", _members(s), _members(int(t)), float(values[s] - values[t]))
            )

        others = masks[masks > s]
        excess = values[others | s] + values[others & s] - values[s] - values[others]
        for t in others[excess > tol]:
            violations.append(
                Violation(
                    "submodularity",
                    _members(s),
                    _members(int(t)),
                    float(values[int(t) | s] + values[int(t) & s] - values[s] - values[t]),
                )
            )

    if violations:
        logger.debug(f"{oracle!r} failed validation with {len(violations)} violation(s).")
    return ValidationReport(tuple(violations))


def _as_point(point, arity: int) -> np.ndarray:
    values = point.as_array() if isinstance(point, RateVector) else np.asarray(point, dtype=float)
    if values.shape != (arity,):
        raise DomainError(f"point has shape {values.shape}, expected ({arity},)")
    return values


def contains(oracle: RankOracle, point, tol: float = TOLERANCE) -> bool:
    """
    True iff ``point`` is nonnegative and meets every subset constraint within ``tol``.

    ``tol`` only loosens the subset constraints; any negative coordinate is rejected.
    """
    if oracle.arity > MAX_SCAN_ARITY:
        raise DomainError(f"membership scan needs arity <= {MAX_SCAN_ARITY}, got {oracle.arity}")
    values = _as_point(point, oracle.arity)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        return False
    return bool(np.all(_subset_sums(values)[1:] <= oracle.mask_values()[1:] + tol))


def vertex(oracle: RankOracle, permutation: Sequence[int]) -> VertexAllocation:
    """
    Marginal allocation of ``permutation``: the k-th user in the order receives
    f(first k users) - f(first k-1 users).
    """
    order = tuple(int(i) for i in permutation)
    if sorted(order) != list(range(oracle.arity)):
        raise DomainError(f"{order} is not a permutation of 0..{oracle.arity - 1}")
    rates = [0.0] * oracle.arity
    prefix: Subset = frozenset()
    previous = 0.0
    for user in order:
        prefix = prefix | {user}
        current = oracle(prefix)
        marginal = current - previous
        if marginal < -TOLERANCE:
            raise DomainError(f"{oracle!r} is not monotone: marginal {marginal} for user {user}")
        rates[user] = max(marginal, 0.0)
        previous = current
    return VertexAllocation(order, RateVector(tuple(rates)))


def _check_weights(weights, arity: int) -> np.ndarray:
    values = np.asarray(weights, dtype=float)
    if values.shape != (arity,):
        raise DomainError(f"weights have shape {values.shape}, expected ({arity},)")
    if not np.all(np.isfinite(values)):
        raise DomainError(f"weights must be finite, got {values}")
    if np.any(values < 0):
        raise DomainError(f"weights must be nonnegative, got {values}")
    return values


def linear_order(weights: Sequence[float]) -> Tuple[int, ...]:
    """Users by descending weight, ties broken by ascending index."""
    return tuple(sorted(range(len(weights)), key=lambda i: (-weights[i], i)))


def maximize_linear(oracle: RankOracle, weights) -> RateVector:
    """Maximizes sum_i w_i R_i over the polymatroid (greedy vertex)."""
    values = _check_weights(weights, oracle.arity)
    return vertex(oracle, linear_order(values.tolist())).rates


def _linear_oracle(oracle: RankOracle, gradient: np.ndarray) -> np.ndarray:
    # Coordinates with negative marginal utility are set to zero; the region is down-closed.
    positive = np.where(gradient > 0, gradient, 0.0)
    direction = maximize_linear(oracle, positive).as_array()
    direction[gradient < 0] = 0.0
    return direction


def initial_point(oracle: RankOracle) -> np.ndarray:
    """
    Identity-order vertex, blended 50/50 with the barycenter of its single-swap
    vertices when it has a zero coordinate.
    """
    start = vertex(oracle, range(oracle.arity)).rates.as_array()
    if oracle.arity == 1 or np.all(start > 0):
        return start
    swaps = []
    for i, j in itertools.combinations(range(oracle.arity), 2):
        order = list(range(oracle.arity))
        order[i], order[j] = order[j], order[i]
        swaps.append(vertex(oracle, order).rates.as_array())
    return 0.5 * start + 0.5 * np.mean(swaps, axis=0)


def _open_loop_step(iteration: int, *_) -> float:
    return 2.0 / (iteration + 2.0)


def _line_search_step(
    iteration: int, utility: Utility, point: np.ndarray, direction: np.ndarray, bisections: int = 60
) -> float:
    def slope(gamma: float) -> float:
        return float(utility.gradient(point + gamma * direction) @ direction)

    if slope(1.0) >= 0:
        return 1.0
    low, high = 0.0, 1.0
    for _ in range(bisections):
        mid = 0.5 * (low + high)
        if slope(mid) > 0:
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


STEP_RULES = {"open_loop": _open_loop_step, "line_search": _line_search_step}


def maximize_concave(
    oracle: RankOracle,
    utility: Utility,
    tol: float = 1e-6,
    max_iters: int = 10_000,
    step_rule: str = "open_loop",
) -> ConcaveSolution:
    """
    Frank-Wolfe (conditional gradient) maximization of a concave utility over
    the polymatroid, using :func:`maximize_linear` as the exact linear oracle.

    Stops when the duality gap ``max_v grad.(v - x)`` drops to ``tol`` or after
    ``max_iters`` iterations; the returned solution reports the gap reached.

    Raises:
        DomainError: for a nonpositive ``tol`` or an unknown ``step_rule``.
        SolverError: if the utility gradient is nonfinite at an iterate.
    """
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")
    if step_rule not in STEP_RULES:
        raise DomainError(f"unknown step rule {step_rule!r}; choose from {sorted(STEP_RULES)}")
    step = STEP_RULES[step_rule]

    point = initial_point(oracle)
    gap = math.inf
    for iteration in range(max_iters + 1):
        gradient = np.asarray(utility.gradient(point), dtype=float)
        if not np.all(np.isfinite(gradient)):
            raise SolverError(
                "utility gradient is not finite",
                {"iteration": iteration, "iterate": point.tolist(), "gradient": gradient.tolist()},
            )
        target = _linear_oracle(oracle, gradient)
        direction = target - point
        gap = max(float(gradient @ direction), 0.0)
        if gap <= tol:
            return ConcaveSolution(RateVector.from_array(np.maximum(point, 0.0)), gap, iteration, True)
        if iteration == max_iters:
            break
        point = point + step(iteration, utility, point, direction) * direction

    logger.debug(f"Frank-Wolfe stopped after {max_iters} iterations on {oracle!r} with gap {gap:.3g}.")
    return ConcaveSolution(RateVector.from_array(np.maximum(point, 0.0)), gap, max_iters, False)


def uniform_margin(oracle: RankOracle, rates) -> float:
    """
    Largest epsilon with ``rates + epsilon`` (every coordinate) inside the region:
    ``min_{S nonempty} (f(S) - sum_{i in S} rates_i) / |S|``. Negative outside.
    """
    if oracle.arity > MAX_SCAN_ARITY:
        raise DomainError(f"margin scan needs arity <= {MAX_SCAN_ARITY}, got {oracle.arity}")
    values = _as_point(rates, oracle.arity)
    slack = oracle.mask_values()[1:] - _subset_sums(values)[1:]
    sizes = np.bitwise_count(np.arange(1, 1 << oracle.arity))
    return float(np.min(slack / sizes))


def boundary_slack(oracle: RankOracle, rates) -> float:
    """``min_{S nonempty} (f(S) - sum_{i in S} rates_i)``; zero on the region boundary."""
    if oracle.arity > MAX_SCAN_ARITY:
        raise DomainError(f"slack scan needs arity <= {MAX_SCAN_ARITY}, got {oracle.arity}")
    values = _as_point(rates, oracle.arity)
    return float(np.min(oracle.mask_values()[1:] - _subset_sums(values)[1:]))


def most_violated_subset(oracle: RankOracle, rates) -> Tuple[Subset, float]:
    """The subset S maximizing ``sum_{i in S} rates_i - f(S)``, and that excess."""
    if oracle.arity > MAX_SCAN_ARITY:
        raise DomainError(f"violation scan needs arity <= {MAX_SCAN_ARITY}, got {oracle.arity}")
    values = _as_point(rates, oracle.arity)
    excess = _subset_sums(values)[1:] - oracle.mask_values()[1:]
    best = int(np.argmax(excess))
    return _members(best + 1), float(excess[best])
