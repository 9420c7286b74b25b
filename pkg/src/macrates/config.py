"""
Scenario files: parsing, validation and the resolved :class:`ScenarioConfig`.

A scenario file is TOML with the sections ``[mac]``, ``[fading]``, ``[utility]``,
``[controller]`` and ``[scenario]``. All problems found are reported together.
"""

import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .capacity import ChannelState, MacConfig, instantaneous_rank, throughput_rank
from .conf import get_setting
from .exceptions import ConfigurationError, MacRatesError
from .fading import FadingProcess, GainChain
from .forms import (
    CaseForm,
    ChainForm,
    ControllerForm,
    FadingForm,
    MacForm,
    ScenarioForm,
    SCENARIOS,
    UtilityForm,
)
from .policies import CongestionController
from .utility import AlphaFairUtility

logger = logging.getLogger(__name__)

SECTIONS = ("mac", "fading", "utility", "controller", "scenario")

DEFAULT_SLOTS = {"limited_duration": 10_000, "file_upload": 0, "stability_probe": 100_000}
DEFAULT_CHECKPOINTS = (10, 100, 1_000, 10_000, 100_000)
DEFAULT_CONTROLLER_GAIN = 10.0


@dataclass(frozen=True)
class ProbeCase:
    """An arrival-rate vector for the stability probe, given directly or as a load factor."""

    name: str
    rates: Optional[Tuple[float, ...]] = None
    load: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    mac: MacConfig
    chains: Tuple[GainChain, ...]
    utility: AlphaFairUtility
    controller_gain: float = DEFAULT_CONTROLLER_GAIN
    controller_cap: Optional[float] = None
    jitter: bool = False
    slots: int = 10_000
    seed: int = 0
    replications: int = 1
    policies: Tuple[str, ...] = ("greedy", "queue")
    k_values: Tuple[float, ...] = (DEFAULT_CONTROLLER_GAIN,)
    checkpoints: Tuple[int, ...] = DEFAULT_CHECKPOINTS
    file_sizes: Tuple[Tuple[float, ...], ...] = ()
    slot_cap: int = 10**7
    arrivals: str = "deterministic"
    arrival_probability: float = 0.5
    arrival_spread: float = 0.5
    block_length: int = 10
    drift_horizon: Optional[int] = None
    slope_threshold: float = 1e-3
    step_rule: str = "open_loop"
    cases: Tuple[ProbeCase, ...] = ()
    source: Optional[Path] = field(default=None, compare=False)

    @property
    def num_users(self) -> int:
        return self.mac.num_users

    def fading(self, seed_sequence: Optional[np.random.SeedSequence] = None) -> FadingProcess:
        """A fresh fading process over the configured chains."""
        if seed_sequence is None:
            seed_sequence = np.random.SeedSequence(self.seed)
        return FadingProcess(self.chains, seed_sequence)

    @property
    def peak_state(self) -> ChannelState:
        return ChannelState(tuple(max(chain.states) for chain in self.chains))

    @property
    def arrival_cap(self) -> float:
        """D, defaulting to a multiple of the full-set rank at every user's peak gain."""
        if self.controller_cap is not None:
            return self.controller_cap
        peak = instantaneous_rank(self.mac, self.peak_state, range(self.num_users))
        return get_setting("CONTROLLER_CAP_FACTOR") * peak

    def controller(self, gain: Optional[float] = None) -> CongestionController:
        return CongestionController(
            gain=self.controller_gain if gain is None else gain,
            cap=self.arrival_cap,
            alpha=self.utility.alpha,
            weights=self.utility.weights,
            jitter=self.jitter,
        )


def _section(raw: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = raw.get(name, {})
    return value if isinstance(value, dict) else {"__invalid__": value}


def _chains(fading: Dict[str, Any], num_users: int, errors: List[str]) -> Tuple[GainChain, ...]:
    tables = fading["chains"]
    built: Dict[str, GainChain] = {}
    for name, table in tables.items():
        label = f"fading.chains.{name}"
        if not isinstance(table, dict):
            errors.append(f"{label}: expected a table")
            continue
        form = ChainForm(data=table)
        if not form.is_valid():
            errors.extend(form.error_list(label))
            continue
        data = form.cleaned_data
        try:
            built[name] = GainChain(
                tuple(data["states"]),
                tuple(tuple(row) for row in data["transition"]),
                tuple(data["initial"]) if data["initial"] else None,
            )
        except ConfigurationError as e:
            errors.extend(f"{label}.{message}" for message in e.errors)

    assignment = fading["assignment"]
    if not assignment:
        if len(tables) != 1:
            errors.append("fading.assignment: required when more than one chain is defined")
            return ()
        assignment = [next(iter(tables))] * num_users
    if len(assignment) != num_users:
        errors.append(f"fading.assignment: expected {num_users} chain names, got {len(assignment)}")
        return ()
    missing = sorted(set(assignment) - set(tables))
    if missing:
        errors.append(f"fading.assignment: undefined chains {missing}")
        return ()
    if any(name not in built for name in assignment):
        return ()
    return tuple(built[name] for name in assignment)


def parse_scenario(
    raw: Dict[str, Any],
    scenario: str,
    *,
    seed: Optional[int] = None,
    replications: Optional[int] = None,
    slots: Optional[int] = None,
    source: Optional[Path] = None,
) -> ScenarioConfig:
    """
    Validates a parsed scenario document and resolves it into a :class:`ScenarioConfig`.

    Keyword arguments override the corresponding ``[scenario]`` values.

    Raises:
        ConfigurationError: listing every invalid field as ``section.field: message``.
    """
    errors: List[str] = []
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"scenario: unknown scenario {scenario!r}, choose from {SCENARIOS}")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        errors.append(f"config: unknown sections {unknown}")
    for name in ("mac", "fading", "utility"):
        if name not in raw:
            errors.append(f"{name}: section is required")

    forms = {
        "mac": MacForm(data=_section(raw, "mac")),
        "fading": FadingForm(data=_section(raw, "fading")),
        "utility": UtilityForm(data=_section(raw, "utility")),
        "controller": ControllerForm(data=_section(raw, "controller")),
        "scenario": ScenarioForm(data=_section(raw, "scenario")),
    }
    for name, form in forms.items():
        if name in raw and not form.is_valid():
            errors.extend(form.error_list())
    if errors:
        raise ConfigurationError(errors)

    mac_data = forms["mac"].cleaned_data
    try:
        mac = MacConfig(mac_data["num_users"], tuple(mac_data["powers"]), mac_data["noise"])
    except MacRatesError as e:
        raise ConfigurationError(f"mac: {e}") from e

    chains = _chains(forms["fading"].cleaned_data, mac.num_users, errors)

    utility_data = forms["utility"].cleaned_data
    utility = None
    if len(utility_data["weights"]) != mac.num_users:
        errors.append(
            f"utility.weights: expected {mac.num_users} entries, got {len(utility_data['weights'])}"
        )
    else:
        utility = AlphaFairUtility(utility_data["alpha"], tuple(utility_data["weights"]))

    controller = forms["controller"].cleaned_data if "controller" in raw else {}
    options = forms["scenario"].cleaned_data if "scenario" in raw else {}
    declared = options.get("type")
    if declared and declared != scenario:
        errors.append(f"scenario.type: file declares {declared!r} but {scenario!r} was requested")

    cases = _cases(options.get("cases"), mac.num_users, errors) if scenario == "stability_probe" else ()
    file_sizes = tuple(tuple(entry) for entry in options.get("file_sizes") or ())
    for entry in file_sizes:
        if len(entry) not in (1, mac.num_users):
            errors.append(f"scenario.file_sizes: entry {list(entry)} needs 1 or {mac.num_users} values")
    if scenario == "file_upload" and not file_sizes:
        errors.append("scenario.file_sizes: required for file_upload")
    if scenario == "stability_probe" and not cases:
        errors.append("scenario.cases: at least one case is required for stability_probe")
    if errors:
        raise ConfigurationError(errors)

    file_sizes = tuple(entry * mac.num_users if len(entry) == 1 else entry for entry in file_sizes)
    gain = controller.get("K")
    k_values = tuple(options.get("k_values") or ()) or (
        (gain,) if gain is not None else tuple(float(k) for k in get_setting("K_VALUES"))
    )
    config = ScenarioConfig(
        scenario=scenario,
        mac=mac,
        chains=chains,
        utility=utility,
        controller_gain=gain if gain is not None else DEFAULT_CONTROLLER_GAIN,
        controller_cap=controller.get("D"),
        jitter=bool(controller.get("jitter")),
        slots=slots or options.get("slots") or DEFAULT_SLOTS[scenario],
        seed=seed if seed is not None else (options.get("seed") or 0),
        replications=replications or options.get("replications") or 1,
        policies=tuple(options.get("policies") or ("greedy", "queue")),
        k_values=k_values,
        checkpoints=tuple(options.get("checkpoints") or DEFAULT_CHECKPOINTS),
        file_sizes=file_sizes,
        slot_cap=options.get("slot_cap") or get_setting("SLOT_CAP"),
        arrivals=options.get("arrivals") or "deterministic",
        arrival_probability=options.get("arrival_probability") or 0.5,
        arrival_spread=options.get("arrival_spread") if options.get("arrival_spread") is not None else 0.5,
        block_length=options.get("block_length") or get_setting("BLOCK_LENGTH"),
        drift_horizon=options.get("drift_horizon"),
        slope_threshold=options.get("slope_threshold") or get_setting("SLOPE_THRESHOLD"),
        step_rule=options.get("step_rule") or "open_loop",
        cases=cases,
        source=source,
    )
    _check_config(config)
    return config


def _cases(entries: Any, num_users: int, errors: List[str]) -> Tuple[ProbeCase, ...]:
    if not entries:
        return ()
    if not isinstance(entries, list):
        errors.append("scenario.cases: expected an array of tables")
        return ()
    cases = []
    for k, entry in enumerate(entries):
        label = f"scenario.cases[{k}]"
        if not isinstance(entry, dict):
            errors.append(f"{label}: expected a table")
            continue
        form = CaseForm(data=entry)
        if not form.is_valid():
            errors.extend(form.error_list(label))
            continue
        data = form.cleaned_data
        if data["rates"] and len(data["rates"]) != num_users:
            errors.append(f"{label}.rates: expected {num_users} entries, got {len(data['rates'])}")
            continue
        cases.append(
            ProbeCase(data["name"], tuple(data["rates"]) if data["rates"] else None, data["load"])
        )
    names = [case.name for case in cases]
    if len(set(names)) != len(names):
        errors.append("scenario.cases: case names must be unique")
    return tuple(cases)


def _check_config(config: ScenarioConfig) -> None:
    errors = []
    if config.scenario == "file_upload":
        fading = config.fading()
        for user in range(config.num_users):
            if throughput_rank(config.mac, fading, [user]) <= 0:
                errors.append(f"mac: user {user + 1} has zero throughput and can never finish its file")
    if config.scenario != "stability_probe" and "queue" in config.policies and config.utility.alpha <= 0:
        errors.append("utility.alpha: the queue-based policy needs alpha > 0")
    if errors:
        raise ConfigurationError(errors)


def load_scenario(path: Union[Path, str], scenario: str, **overrides) -> ScenarioConfig:
    """
    Reads and validates the scenario file at ``path``.

    Raises:
        ConfigurationError: if the file is missing, is not TOML, or fails validation.
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError as e:
        raise ConfigurationError(f"config: file not found at {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"config: {path} is not valid TOML ({e})") from e
    logger.info(f"Loaded scenario file {path} for scenario '{scenario}'.")
    return parse_scenario(raw, scenario, source=path, **overrides)
