"""Exception hierarchy shared by every module of the laboratory."""

from typing import Any, Dict, Iterable, List, Optional


class MacRatesError(Exception):
    """Base class for all laboratory errors."""


class DomainError(MacRatesError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigurationError(MacRatesError):
    """
    A configuration (scenario file, chain definition, arrival vector) is invalid.

    ``errors`` keeps every individual ``field: message`` string so callers can
    report all problems at once instead of failing on the first.
    """

    def __init__(self, errors: Iterable[str] | str):
        if isinstance(errors, str):
            errors = [errors]
        self.errors: List[str] = list(errors)
        super().__init__("; ".join(self.errors))


class SolverError(MacRatesError):
    """An optimization routine could not continue."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics: Dict[str, Any] = diagnostics or {}
        super().__init__(message)


class SimulationError(MacRatesError):
    """A scenario run failed at runtime (for example, it hit the slot cap)."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics: Dict[str, Any] = diagnostics or {}
        super().__init__(message)
