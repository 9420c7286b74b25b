"""
Finite-state Markov channel-gain processes.

Each user's gain follows its own irreducible Markov chain; chains evolve
independently, so the joint stationary law is the product of the per-chain laws.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import List, Optional, Tuple

import numpy as np

from .capacity import ChannelState
from .exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-12
MAX_PRODUCT_STATES = 10**6


def substream(seed_sequence: np.random.SeedSequence, *keys: int) -> np.random.SeedSequence:
    """Derives a child seed sequence from ``keys`` without mutating the parent."""
    return np.random.SeedSequence(
        entropy=seed_sequence.entropy,
        spawn_key=tuple(seed_sequence.spawn_key) + tuple(int(k) for k in keys),
    )


def _is_irreducible(transition: np.ndarray) -> bool:
    """Every state reaches every other state through positive-probability moves."""
    size = transition.shape[0]
    adjacency = transition > 0
    for start in range(size):
        seen = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for nxt in np.flatnonzero(adjacency[node]):
                if nxt not in seen:
                    seen.add(int(nxt))
                    frontier.append(int(nxt))
        if len(seen) != size:
            return False
    return True


@dataclass(frozen=True)
class GainChain:
    """
    A Markov chain over channel-gain levels.

    ``initial`` is the distribution of the first slot's state; when omitted the
    stationary distribution is used, so runs start in steady state.
    """

    states: Tuple[float, ...]
    transition: Tuple[Tuple[float, ...], ...]
    initial: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        errors: List[str] = []
        try:
            states = tuple(float(h) for h in self.states)
            rows = tuple(tuple(float(p) for p in row) for row in self.transition)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"chain: states and transition must be numeric ({e})") from e

        if not states:
            errors.append("states: at least one gain level is required")
        if any(not math.isfinite(h) or h < 0 for h in states):
            errors.append(f"states: gains must be finite and nonnegative, got {states}")
        if len(rows) != len(states) or any(len(row) != len(states) for row in rows):
            errors.append(
                f"transition: expected a {len(states)}x{len(states)} matrix"
            )
        else:
            for k, row in enumerate(rows):
                if any(not math.isfinite(p) or p < 0 or p > 1 for p in row):
                    errors.append(f"transition: row {k} has entries outside [0, 1]")
                elif abs(math.fsum(row) - 1.0) > ROW_SUM_TOL:
                    errors.append(f"transition: row {k} sums to {math.fsum(row)!r}, not 1")
        initial = None
        if self.initial is not None:
            initial = tuple(float(p) for p in self.initial)
            if len(initial) != len(states) or any(p < 0 for p in initial):
                errors.append("initial: must be a nonnegative vector over the states")
            elif abs(math.fsum(initial) - 1.0) > ROW_SUM_TOL:
                errors.append("initial: must sum to 1")
        if not errors and not _is_irreducible(np.asarray(rows)):
            errors.append("transition: chain is reducible (no unique stationary distribution)")
        if errors:
            raise ConfigurationError(errors)

        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transition", rows)
        object.__setattr__(self, "initial", initial)

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def transition_matrix(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    @property
    def gain_array(self) -> np.ndarray:
        return np.asarray(self.states, dtype=float)

    @cached_property
    def stationary(self) -> np.ndarray:
        return stationary_distribution(self)

    @cached_property
    def cumulative_rows(self) -> np.ndarray:
        cumulative = np.cumsum(self.transition_matrix, axis=1)
        cumulative[:, -1] = 1.0
        return cumulative


def stationary_distribution(chain: GainChain) -> np.ndarray:
    """
    Solves pi P = pi, sum(pi) = 1 for an irreducible chain.

    The linear system is solved directly; power iteration is the fallback when
    the solve fails or leaves a residual above tolerance.
    """
    matrix = chain.transition_matrix
    size = matrix.shape[0]
    if size == 1:
        return np.ones(1)
    if not _is_irreducible(matrix):
        raise ConfigurationError("transition: chain is reducible")

    system = matrix.T - np.eye(size)
    system[-1, :] = 1.0
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        logger.debug("Stationary solve is singular; falling back to power iteration.")
        pi = None

    if pi is None or np.max(np.abs(pi @ matrix - pi)) > STATIONARY_TOL or np.any(pi < -STATIONARY_TOL):
        pi = _power_iteration(matrix)

    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _power_iteration(matrix: np.ndarray, max_iters: int = 1_000_000) -> np.ndarray:
    size = matrix.shape[0]
    # Lazy chain shares the stationary law and is aperiodic.
    lazy = 0.5 * (matrix + np.eye(size))
    pi = np.full(size, 1.0 / size)
    for _ in range(max_iters):
        nxt = pi @ lazy
        if np.max(np.abs(nxt - pi)) <= STATIONARY_TOL:
            return nxt
        pi = nxt
    return pi


def variation_ratio(chain: GainChain) -> float:
    """Stationary standard deviation over stationary mean of the gain."""
    pi = chain.stationary
    gains = chain.gain_array
    mean = float(pi @ gains)
    if mean <= 0:
        raise DomainError("variation ratio is undefined for a zero-mean gain")
    variance = float(pi @ (gains - mean) ** 2)
    return math.sqrt(max(variance, 0.0)) / mean


@dataclass(eq=False)
class FadingProcess:
    """
    Independent per-user gain chains plus their current states.

    Each chain draws from its own substream of ``seed``; a process is owned by
    exactly one replication.
    """

    chains: Tuple[GainChain, ...]
    seed: np.random.SeedSequence = field(default_factory=np.random.SeedSequence)
    current: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.chains = tuple(self.chains)
        if not self.chains:
            raise ConfigurationError("fading: at least one chain is required")
        self._rngs = [
            np.random.default_rng(substream(self.seed, k)) for k in range(len(self.chains))
        ]
        self.current = np.array(
            [self._draw_initial(chain, rng) for chain, rng in zip(self.chains, self._rngs)],
            dtype=int,
        )

    @staticmethod
    def _draw_initial(chain: GainChain, rng: np.random.Generator) -> int:
        law = np.asarray(chain.initial) if chain.initial is not None else chain.stationary
        cumulative = np.cumsum(law)
        cumulative[-1] = 1.0
        return int(np.searchsorted(cumulative, rng.random(), side="right"))

    @property
    def num_users(self) -> int:
        return len(self.chains)

    @cached_property
    def _radices(self) -> np.ndarray:
        sizes = [chain.num_states for chain in self.chains]
        return np.concatenate(([1], np.cumprod(sizes[:-1]))).astype(int)

    @property
    def state(self) -> ChannelState:
        return ChannelState(
            tuple(chain.states[k] for chain, k in zip(self.chains, self.current))
        )

    @property
    def state_id(self) -> int:
        """Mixed-radix index of the joint state (user 1 is the least significant digit)."""
        return int(self.current @ self._radices)

    def state_for_id(self, state_id: int) -> ChannelState:
        gains = []
        for chain in self.chains:
            state_id, k = divmod(state_id, chain.num_states)
            gains.append(chain.states[k])
        return ChannelState(tuple(gains))

    @property
    def num_joint_states(self) -> int:
        return int(np.prod([chain.num_states for chain in self.chains], dtype=object))

    def step(self) -> ChannelState:
        """Advances every chain by one transition and returns the new gains."""
        for user, (chain, rng) in enumerate(zip(self.chains, self._rngs)):
            row = chain.cumulative_rows[self.current[user]]
            self.current[user] = int(np.searchsorted(row, rng.random(), side="right"))
        return self.state

    def joint_law(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Gains of every joint state (one row per state, ordered by ``state_id``)
        and their stationary probabilities.

        Raises:
            ConfigurationError: if the product space exceeds ``MAX_PRODUCT_STATES``.
        """
        return _joint_law(self.chains)


@lru_cache(maxsize=64)
def _joint_law(chains: Tuple[GainChain, ...]) -> Tuple[np.ndarray, np.ndarray]:
    size = int(np.prod([chain.num_states for chain in chains], dtype=object))
    if size > MAX_PRODUCT_STATES:
        raise ConfigurationError(
            f"fading: product state space has {size} states (limit {MAX_PRODUCT_STATES})"
        )
    gains = np.empty((size, len(chains)))
    probabilities = np.ones(size)
    stride = 1
    for user, chain in enumerate(chains):
        index = (np.arange(size) // stride) % chain.num_states
        gains[:, user] = chain.gain_array[index]
        probabilities *= chain.stationary[index]
        stride *= chain.num_states
    gains.flags.writeable = False
    probabilities.flags.writeable = False
    return gains, probabilities


def step(process: FadingProcess) -> ChannelState:
    """Advances ``process`` by one slot."""
    return process.step()
