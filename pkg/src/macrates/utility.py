"""
Concave utilities of rate vectors.

The weighted alpha-fair family covers linear (alpha = 0), proportionally fair
(alpha = 1) and increasingly max-min fair (alpha -> infinity) objectives.
"""

import math
from dataclasses import dataclass
from typing import Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from .exceptions import DomainError

DEFAULT_FLOOR = 1e-9


@runtime_checkable
class Utility(Protocol):
    """Anything with a concave ``value`` and its ``gradient`` over rate vectors."""

    def value(self, rates: Sequence[float]) -> float: ...

    def gradient(self, rates: Sequence[float]) -> np.ndarray: ...


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha < 0:
        raise DomainError(f"alpha must be finite and nonnegative, got {alpha!r}")
    return alpha


def alpha_fair_value(x: float, alpha: float, weight: float = 1.0, floor: float = DEFAULT_FLOOR) -> float:
    """w x^(1-alpha) / (1-alpha), or w ln x when alpha is 1; x is floored at ``floor``."""
    alpha = _check_alpha(alpha)
    x = max(float(x), floor)
    if alpha == 1.0:
        return weight * math.log(x)
    return weight * x ** (1.0 - alpha) / (1.0 - alpha)


def alpha_fair_gradient(x: float, alpha: float, weight: float = 1.0, floor: float = DEFAULT_FLOOR) -> float:
    """Marginal utility w max(x, floor)^(-alpha)."""
    alpha = _check_alpha(alpha)
    return weight * max(float(x), floor) ** (-alpha)


@dataclass(frozen=True)
class AlphaFairUtility:
    """u(R) = sum_i w_i f_alpha(max(R_i, floor))."""

    alpha: float
    weights: Tuple[float, ...]
    floor: float = DEFAULT_FLOOR

    def __post_init__(self) -> None:
        alpha = _check_alpha(self.alpha)
        try:
            weights = tuple(float(w) for w in self.weights)
        except (TypeError, ValueError) as e:
            raise DomainError(f"weights must be numeric: {e}") from e
        if not weights or any(not math.isfinite(w) or w <= 0 for w in weights):
            raise DomainError(f"weights must be finite and strictly positive, got {weights}")
        if not self.floor > 0:
            raise DomainError(f"floor must be strictly positive, got {self.floor!r}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "floor", float(self.floor))

    @classmethod
    def linear(cls, weights: Sequence[float]) -> "AlphaFairUtility":
        return cls(0.0, tuple(weights))

    @property
    def num_users(self) -> int:
        return len(self.weights)

    def _floored(self, rates: Sequence[float]) -> np.ndarray:
        values = np.asarray(rates, dtype=float)
        if values.shape != (self.num_users,):
            raise DomainError(f"rates have shape {values.shape}, expected ({self.num_users},)")
        return np.maximum(values, self.floor)

    def value(self, rates: Sequence[float]) -> float:
        x = self._floored(rates)
        w = np.asarray(self.weights)
        if self.alpha == 1.0:
            terms = w * np.log(x)
        else:
            terms = w * x ** (1.0 - self.alpha) / (1.0 - self.alpha)
        return math.fsum(terms.tolist())

    def gradient(self, rates: Sequence[float]) -> np.ndarray:
        return np.asarray(self.weights) * self._floored(rates) ** (-self.alpha)
