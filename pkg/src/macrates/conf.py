"""Laboratory defaults, overridable through ``settings.MACRATES``."""

from typing import Any

from django.conf import settings

DEFAULTS = {
    "SOLVER_TOL": 1e-6,
    "SOLVER_MAX_ITERS": 10_000,
    "SLOT_CAP": 10**7,
    "SLOPE_THRESHOLD": 1e-3,
    "MIN_VERDICT_SLOTS": 10_000,
    "BOUNDARY_TOL": 1e-6,
    "CONTROLLER_CAP_FACTOR": 2.0,
    "K_VALUES": (1.0, 10.0, 100.0),
    "BLOCK_LENGTH": 10,
}


def get_setting(name: str) -> Any:
    """Returns ``settings.MACRATES[name]``, falling back to the bundled default."""
    overrides = getattr(settings, "MACRATES", {}) or {}
    if name in overrides:
        return overrides[name]
    return DEFAULTS[name]
