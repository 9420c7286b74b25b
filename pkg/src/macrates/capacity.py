"""
Gaussian multiple-access channel parameters and the rank functions of its
capacity regions.

All rates are in nats per slot; one slot is one channel use.
"""

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence, Tuple

import numpy as np

from .exceptions import DomainError

if TYPE_CHECKING:
    from .fading import FadingProcess

logger = logging.getLogger(__name__)

# Absolute tolerance for every equality/inequality test on rank values.
TOLERANCE = 1e-9


def _as_float_tuple(values: Iterable[float], name: str) -> Tuple[float, ...]:
    try:
        result = tuple(float(v) for v in values)
    except (TypeError, ValueError) as e:
        raise DomainError(f"{name} must be a sequence of numbers: {e}") from e
    if not all(math.isfinite(v) for v in result):
        raise DomainError(f"{name} must be finite, got {result}")
    return result


@dataclass(frozen=True)
class MacConfig:
    """User count, fixed transmit powers and receiver noise level."""

    num_users: int
    powers: Tuple[float, ...]
    noise: float

    def __post_init__(self) -> None:
        if not isinstance(self.num_users, (int, np.integer)) or self.num_users < 1:
            raise DomainError(f"num_users must be a positive integer, got {self.num_users!r}")
        powers = _as_float_tuple(self.powers, "powers")
        if len(powers) != self.num_users:
            raise DomainError(
                f"powers has {len(powers)} entries but num_users is {self.num_users}"
            )
        if any(p < 0 for p in powers):
            raise DomainError(f"powers must be nonnegative, got {powers}")
        noise = float(self.noise)
        if not math.isfinite(noise) or noise <= 0:
            raise DomainError(f"noise must be finite and strictly positive, got {self.noise!r}")
        object.__setattr__(self, "num_users", int(self.num_users))
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "noise", noise)

    @property
    def power_array(self) -> np.ndarray:
        return np.asarray(self.powers, dtype=float)


@dataclass(frozen=True)
class ChannelState:
    """Realized channel gains h_i of one slot."""

    gains: Tuple[float, ...]

    def __post_init__(self) -> None:
        gains = _as_float_tuple(self.gains, "gains")
        if any(h < 0 for h in gains):
            raise DomainError(f"gains must be nonnegative, got {gains}")
        object.__setattr__(self, "gains", gains)

    def __len__(self) -> int:
        return len(self.gains)

    @property
    def gain_array(self) -> np.ndarray:
        return np.asarray(self.gains, dtype=float)


@dataclass(frozen=True)
class RateVector:
    """Per-user rates in nats per slot."""

    rates: Tuple[float, ...]

    def __post_init__(self) -> None:
        rates = _as_float_tuple(self.rates, "rates")
        if any(r < 0 for r in rates):
            raise DomainError(f"rates must be nonnegative, got {rates}")
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return len(self.rates)

    def __getitem__(self, index: int) -> float:
        return self.rates[index]

    def __iter__(self):
        return iter(self.rates)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "RateVector":
        return cls(tuple(float(v) for v in values))

    def is_close(self, other: "RateVector", tol: float = TOLERANCE) -> bool:
        return len(self) == len(other) and bool(
            np.all(np.abs(self.as_array() - other.as_array()) <= tol)
        )


def shannon_capacity(power: float, noise: float) -> float:
    """
    AWGN capacity C(P, N) = (1/2) ln(1 + P/N) in nats per channel use.

    Raises:
        DomainError: if either argument is nonfinite, ``power < 0`` or ``noise <= 0``.
    """
    if not (math.isfinite(power) and math.isfinite(noise)):
        raise DomainError(f"capacity arguments must be finite, got P={power!r}, N={noise!r}")
    if noise <= 0:
        raise DomainError(f"noise must be strictly positive, got {noise!r}")
    if power < 0:
        raise DomainError(f"power must be nonnegative, got {power!r}")
    return 0.5 * math.log1p(power / noise)


def _check_subset(subset: Iterable[int], num_users: int) -> Tuple[int, ...]:
    members = tuple(sorted(set(int(i) for i in subset)))
    for i in members:
        if i < 0 or i >= num_users:
            raise DomainError(f"user index {i} out of range for {num_users} users")
    return members


def instantaneous_rank(config: MacConfig, state: ChannelState, subset: Iterable[int]) -> float:
    """Sum-rate bound f(S) = C(sum_{i in S} h_i P_i, N_0) of the instantaneous region."""
    if len(state) != config.num_users:
        raise DomainError(
            f"channel state has {len(state)} gains but the channel has {config.num_users} users"
        )
    members = _check_subset(subset, config.num_users)
    if not members:
        return 0.0
    received = math.fsum(state.gains[i] * config.powers[i] for i in members)
    return shannon_capacity(received, config.noise)


def throughput_rank(config: MacConfig, fading: "FadingProcess", subset: Iterable[int]) -> float:
    """
    Sum-rate bound of the throughput region: the stationary expectation of the
    instantaneous rank, summed exactly over the product state space of the
    per-user chains.

    Raises:
        ConfigurationError: if a chain is reducible or the product space is too large.
    """
    if fading.num_users != config.num_users:
        raise DomainError(
            f"fading process has {fading.num_users} users but the channel has {config.num_users}"
        )
    members = _check_subset(subset, config.num_users)
    if not members:
        return 0.0
    gains, probabilities = fading.joint_law()
    index = list(members)
    received = gains[:, index] @ config.power_array[index]
    return float(probabilities @ (0.5 * np.log1p(received / config.noise)))
