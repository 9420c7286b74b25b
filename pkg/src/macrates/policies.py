"""
Rate-allocation mechanisms.

* the offline optimum over the throughput region, the benchmark R*;
* the greedy policy, maximizing utility over the current instantaneous region;
* the queue-based policy: max-weight scheduling fed by a congestion controller;
* the block-transmission scheme used to show that every rate vector inside the
  capacity region can be stabilized.
"""

import logging
import math
import threading
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .capacity import ChannelState, MacConfig, RateVector
from .conf import get_setting
from .exceptions import ConfigurationError, DomainError
from .polymatroid import RankOracle, linear_order, maximize_concave, maximize_linear, vertex
from .queueing import QueueVector
from .utility import AlphaFairUtility, Utility

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CongestionController:
    """Queue-driven arrivals with conditional mean min{K (w_i / Q_i)^(1/alpha), D}."""

    gain: float
    cap: float
    alpha: float
    weights: Tuple[float, ...]
    jitter: bool = False

    def __post_init__(self) -> None:
        errors = []
        if not (math.isfinite(self.gain) and self.gain > 0):
            errors.append(f"controller.K: must be positive, got {self.gain!r}")
        if not (math.isfinite(self.cap) and self.cap > 0):
            errors.append(f"controller.D: must be positive, got {self.cap!r}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            errors.append(f"utility.alpha: the controller needs alpha > 0, got {self.alpha!r}")
        weights = tuple(float(w) for w in self.weights)
        if not weights or any(not math.isfinite(w) or w <= 0 for w in weights):
            errors.append(f"utility.weights: must be positive, got {weights}")
        if errors:
            raise ConfigurationError(errors)
        object.__setattr__(self, "weights", weights)

    def mean_arrivals(self, queues: np.ndarray) -> np.ndarray:
        queues = np.asarray(queues, dtype=float)
        with np.errstate(divide="ignore"):
            means = self.gain * (np.asarray(self.weights) / queues) ** (1.0 / self.alpha)
        return np.where(queues > 0, np.minimum(means, self.cap), self.cap)

    def arrivals(self, queues: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        means = self.mean_arrivals(queues)
        if not self.jitter:
            return means
        if rng is None:
            raise DomainError("jittered controller arrivals need a random generator")
        return means * rng.uniform(0.5, 1.5, means.size)


def controller_arrival(
    queue: float,
    controller: CongestionController,
    user: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Arrival of one user for backlog ``queue``: the conditional mean, or the mean
    scaled by U(0.5, 1.5) when the controller is jittered. An empty queue gets ``D``.
    """
    if not math.isfinite(queue) or queue < 0:
        raise DomainError(f"queue must be finite and nonnegative, got {queue!r}")
    if queue == 0:
        mean = controller.cap
    else:
        mean = min(controller.gain * (controller.weights[user] / queue) ** (1.0 / controller.alpha), controller.cap)
    if not controller.jitter:
        return mean
    if rng is None:
        raise DomainError("jittered controller arrivals need a random generator")
    return mean * rng.uniform(0.5, 1.5)


@dataclass(frozen=True)
class BlockScheme:
    """Fixed-rate codewords of ``block_length`` channel uses, lost with probability ``error_prob``."""

    block_length: int
    target_rates: RateVector
    error_prob: float

    def __post_init__(self) -> None:
        if int(self.block_length) != self.block_length or self.block_length < 1:
            raise DomainError(f"block_length must be a positive integer, got {self.block_length!r}")
        if not 0.0 <= self.error_prob <= 1.0:
            raise DomainError(f"error_prob must lie in [0, 1], got {self.error_prob!r}")
        object.__setattr__(self, "block_length", int(self.block_length))

    @property
    def codeword_sizes(self) -> np.ndarray:
        """n R_i, the nats carried by one codeword of user i."""
        return self.block_length * self.target_rates.as_array()


def required_error_bound(mean_arrivals: Sequence[float], epsilon: float) -> float:
    """Largest admissible decoding-error probability eps / (2 (max_i lambda_i + eps))."""
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise DomainError(f"epsilon must be positive, got {epsilon!r}")
    means = [float(m) for m in mean_arrivals]
    if not means or any(m < 0 for m in means):
        raise DomainError(f"mean arrivals must be nonnegative, got {means}")
    return epsilon / (2.0 * (max(means) + epsilon))


def block_scheme_step(
    queues,
    arrivals,
    scheme: BlockScheme,
    rng: Optional[np.random.Generator] = None,
    decoded: Optional[Sequence[bool]] = None,
) -> QueueVector:
    """
    Advances every queue by one block. A user whose backlog is below its codeword
    size stays silent and only accumulates arrivals; otherwise it sends one
    codeword, which is removed from the queue unless decoding fails.

    ``arrivals`` holds one row per slot of the block (or one total per user);
    ``decoded`` fixes the decoding outcomes instead of drawing them from ``rng``.
    """
    backlog = queues.as_array() if isinstance(queues, QueueVector) else np.asarray(queues, dtype=float)
    incoming = np.asarray(arrivals, dtype=float)
    if incoming.ndim == 2:
        incoming = incoming.sum(axis=0)
    if incoming.shape != backlog.shape or len(scheme.target_rates) != backlog.size:
        raise DomainError(
            f"queues {backlog.shape}, arrivals {incoming.shape} and rates "
            f"({len(scheme.target_rates)},) disagree"
        )
    if decoded is None:
        if rng is None:
            raise DomainError("block_scheme_step needs a random generator or explicit outcomes")
        success = rng.random(backlog.size) >= scheme.error_prob
    else:
        success = np.asarray(decoded, dtype=bool)

    codewords = scheme.codeword_sizes
    sending = backlog >= codewords
    served = np.where(sending & success, codewords, 0.0)
    return QueueVector(tuple(backlog - served + incoming))


@dataclass(frozen=True)
class DriftConstants:
    epsilon_prime: float
    bound_constant: float

    @property
    def queue_bound(self) -> float:
        """B / eps', the bound on the time-average total backlog."""
        return self.bound_constant / self.epsilon_prime


def drift_constants(scheme: BlockScheme, mean_arrivals: Sequence[float], second_moments: Sequence[float]) -> DriftConstants:
    """Constants of the n-slot drift bound of the block scheme."""
    n = scheme.block_length
    lam = np.asarray(mean_arrivals, dtype=float)
    moments = np.asarray(second_moments, dtype=float)
    rates = scheme.target_rates.as_array()
    epsilon = float(np.min(rates - lam))
    if epsilon <= 0:
        raise DomainError("block rates must exceed the mean arrivals of every user")
    p_e = scheme.error_prob
    serving = n * moments + n**2 * (p_e * lam + epsilon * rates)
    silent = n**2 * rates * (2 * lam + epsilon) + n * moments + n * (n - 1) * lam**2
    return DriftConstants(n * epsilon, float(np.sum(np.maximum(serving, silent))))


def greedy_allocate(
    oracle: RankOracle,
    utility: Utility,
    tol: Optional[float] = None,
    max_iters: Optional[int] = None,
    step_rule: str = "open_loop",
) -> RateVector:
    """Utility-maximizing point of the current instantaneous region; uses no queue information."""
    solution = maximize_concave(
        oracle,
        utility,
        tol=tol if tol is not None else get_setting("SOLVER_TOL"),
        max_iters=max_iters if max_iters is not None else get_setting("SOLVER_MAX_ITERS"),
        step_rule=step_rule,
    )
    return solution.rates


def maxweight_allocate(queues, oracle: RankOracle) -> RateVector:
    """argmax of sum_i Q_i R_i over the instantaneous region."""
    weights = queues.as_array() if isinstance(queues, QueueVector) else np.asarray(queues, dtype=float)
    return maximize_linear(oracle, weights)


def offline_optimum(
    config: MacConfig,
    fading,
    utility: Utility,
    tol: Optional[float] = None,
    max_iters: Optional[int] = None,
    step_rule: str = "open_loop",
) -> RateVector:
    """The benchmark R*: utility maximum over the throughput region of ``fading``."""
    oracle = RankOracle.for_fading(config, fading)
    solution = maximize_concave(
        oracle,
        utility,
        tol=tol if tol is not None else get_setting("SOLVER_TOL"),
        max_iters=max_iters if max_iters is not None else get_setting("SOLVER_MAX_ITERS"),
        step_rule=step_rule,
    )
    logger.info(
        f"Offline optimum {tuple(round(r, 6) for r in solution.rates)} "
        f"(gap {solution.gap:.3g} after {solution.iterations} iterations)."
    )
    return solution.rates


def _restricted_utility(utility: Utility, active: Tuple[int, ...]) -> Utility:
    if isinstance(utility, AlphaFairUtility):
        return AlphaFairUtility(utility.alpha, tuple(utility.weights[i] for i in active), utility.floor)
    raise DomainError(f"cannot restrict utility of type {type(utility).__name__}")


class GreedyPolicy:
    """
    Per-state greedy allocation with memoized solutions.

    ``allocate`` sees only the channel state (and, for sessions where users
    leave, the set of users still present).
    """

    def __init__(self, config: MacConfig, utility: Utility, step_rule: str = "open_loop"):
        self.config = config
        self.utility = utility
        self.step_rule = step_rule
        self._cache: Dict[Tuple[ChannelState, Tuple[int, ...]], np.ndarray] = {}
        self._lock = threading.Lock()

    def allocate(self, state: ChannelState, active: Optional[Sequence[int]] = None) -> np.ndarray:
        users = tuple(range(self.config.num_users)) if active is None else tuple(active)
        key = (state, users)
        rates = self._cache.get(key)
        if rates is None:
            rates = np.zeros(self.config.num_users)
            if users:
                oracle = RankOracle.for_channel(self.config, state)
                utility = self.utility
                if len(users) != self.config.num_users:
                    oracle = oracle.restrict(users)
                    utility = _restricted_utility(self.utility, users)
                rates[list(users)] = greedy_allocate(oracle, utility, step_rule=self.step_rule).as_array()
            rates.flags.writeable = False
            with self._lock:
                self._cache[key] = rates
        return rates


class QueueBasedPolicy:
    """Max-weight scheduling over the instantaneous region with memoized vertices."""

    def __init__(self, config: MacConfig):
        self.config = config
        self._oracles: Dict[ChannelState, RankOracle] = {}
        self._vertices: Dict[Tuple[ChannelState, Tuple[int, ...]], np.ndarray] = {}
        self._lock = threading.Lock()

    def allocate(self, queues: np.ndarray, state: ChannelState) -> np.ndarray:
        order = linear_order(np.asarray(queues, dtype=float).tolist())
        key = (state, order)
        rates = self._vertices.get(key)
        if rates is None:
            oracle = self._oracles.get(state)
            if oracle is None:
                oracle = RankOracle.for_channel(self.config, state)
            rates = vertex(oracle, order).rates.as_array()
            rates.flags.writeable = False
            with self._lock:
                self._oracles[state] = oracle
                self._vertices[key] = rates
        return rates
