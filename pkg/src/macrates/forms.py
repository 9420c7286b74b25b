"""
Validation of scenario-file sections.

Every TOML section is bound to one form; a section carrying keys the form
does not declare is rejected.
"""

import math
from typing import Any, Dict, List, Optional

from django import forms
from django.core.exceptions import NON_FIELD_ERRORS, ValidationError

SCENARIOS = ("limited_duration", "file_upload", "stability_probe")
POLICIES = ("greedy", "queue")
ARRIVALS = ("deterministic", "bernoulli-scaled", "uniform-jitter")
STEP_RULES = ("open_loop", "line_search")


def _number(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{value!r} is not a number.")
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{value!r} is not finite.")
    return value


def validate_positive(value: float) -> None:
    if value <= 0:
        raise ValidationError(f"Must be strictly positive, got {value}.")


class FloatListField(forms.Field):
    """A TOML array of numbers (a bare number is accepted when ``allow_scalar``)."""

    def __init__(self, *, allow_scalar: bool = False, positive: bool = False, **kwargs):
        self.allow_scalar = allow_scalar
        self.positive = positive
        super().__init__(**kwargs)

    def to_python(self, value: Any) -> List[float]:
        if value in self.empty_values:
            return []
        if self.allow_scalar and not isinstance(value, (list, tuple)):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise ValidationError("Expected an array of numbers.")
        numbers = [_number(v) for v in value]
        if self.positive and any(v <= 0 for v in numbers):
            raise ValidationError(f"Entries must be strictly positive, got {numbers}.")
        return numbers


class IntegerListField(forms.Field):
    def to_python(self, value: Any) -> List[int]:
        if value in self.empty_values:
            return []
        if not isinstance(value, (list, tuple)) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value
        ):
            raise ValidationError("Expected an array of integers.")
        if any(v < 1 for v in value):
            raise ValidationError("Entries must be positive.")
        return list(value)


class StringListField(forms.Field):
    def __init__(self, *, choices: Optional[tuple] = None, **kwargs):
        self.choices = choices
        super().__init__(**kwargs)

    def to_python(self, value: Any) -> List[str]:
        if value in self.empty_values:
            return []
        if not isinstance(value, (list, tuple)) or any(not isinstance(v, str) for v in value):
            raise ValidationError("Expected an array of strings.")
        if self.choices is not None:
            unknown = [v for v in value if v not in self.choices]
            if unknown:
                raise ValidationError(f"Unknown entries {unknown}; choose from {list(self.choices)}.")
        return list(value)


class MatrixField(forms.Field):
    """A TOML array of numeric rows."""

    def to_python(self, value: Any) -> List[List[float]]:
        if value in self.empty_values:
            return []
        if not isinstance(value, (list, tuple)) or any(not isinstance(row, (list, tuple)) for row in value):
            raise ValidationError("Expected an array of rows.")
        return [[_number(v) for v in row] for row in value]


class FileSizesField(forms.Field):
    """File sizes in nats: each entry is one size for every user or a per-user array."""

    def to_python(self, value: Any) -> List[List[float]]:
        if value in self.empty_values:
            return []
        if not isinstance(value, (list, tuple)):
            value = [value]
        sizes = []
        for entry in value:
            entry = [_number(v) for v in entry] if isinstance(entry, (list, tuple)) else [_number(entry)]
            if not entry or any(v <= 0 for v in entry):
                raise ValidationError(f"File sizes must be strictly positive, got {entry}.")
            sizes.append(entry)
        return sizes


class SectionForm(forms.Form):
    """A form bound to one scenario-file section that fails on undeclared keys."""

    section = ""

    def clean(self) -> Dict[str, Any]:
        cleaned = super().clean()
        unknown = sorted(set(self.data) - set(self.fields))
        if unknown:
            raise ValidationError(f"unknown keys {unknown}")
        return cleaned

    def error_list(self, section: Optional[str] = None) -> List[str]:
        """Errors as ``section.field: message`` strings."""
        section = section or self.section
        messages = []
        for name, errors in self.errors.items():
            label = section if name == NON_FIELD_ERRORS else f"{section}.{name}"
            messages.extend(f"{label}: {message}" for message in errors)
        return messages


class MacForm(SectionForm):
    section = "mac"

    num_users = forms.IntegerField(min_value=1)
    powers = FloatListField()
    noise = forms.FloatField(validators=[validate_positive])

    def clean(self) -> Dict[str, Any]:
        cleaned = super().clean()
        powers = cleaned.get("powers")
        num_users = cleaned.get("num_users")
        if powers is not None and num_users is not None and len(powers) != num_users:
            self.add_error("powers", f"Expected {num_users} entries, got {len(powers)}.")
        if powers and any(p < 0 for p in powers):
            self.add_error("powers", "Powers must be nonnegative.")
        return cleaned


class FadingForm(SectionForm):
    section = "fading"

    assignment = StringListField(required=False)
    chains = forms.Field()

    def clean_chains(self) -> Dict[str, Any]:
        chains = self.cleaned_data["chains"]
        if not isinstance(chains, dict) or not chains:
            raise ValidationError("Expected at least one [fading.chains.<name>] table.")
        return chains


class ChainForm(SectionForm):
    states = FloatListField()
    transition = MatrixField()
    initial = FloatListField(required=False)


class UtilityForm(SectionForm):
    section = "utility"

    alpha = forms.FloatField(min_value=0)
    weights = FloatListField(positive=True)


class ControllerForm(SectionForm):
    section = "controller"

    K = forms.FloatField(required=False, validators=[validate_positive])
    D = forms.FloatField(required=False, validators=[validate_positive])
    jitter = forms.BooleanField(required=False)


class ScenarioForm(SectionForm):
    section = "scenario"

    type = forms.ChoiceField(required=False, choices=[(s, s) for s in SCENARIOS])
    slots = forms.IntegerField(required=False, min_value=1)
    replications = forms.IntegerField(required=False, min_value=1)
    seed = forms.IntegerField(required=False, min_value=0, max_value=2**64 - 1)
    policies = StringListField(required=False, choices=POLICIES)
    k_values = FloatListField(required=False, positive=True)
    checkpoints = IntegerListField(required=False)
    file_sizes = FileSizesField(required=False)
    slot_cap = forms.IntegerField(required=False, min_value=1)
    arrivals = forms.ChoiceField(required=False, choices=[(a, a) for a in ARRIVALS])
    arrival_probability = forms.FloatField(required=False, validators=[validate_positive], max_value=1)
    arrival_spread = forms.FloatField(required=False, min_value=0, max_value=1)
    block_length = forms.IntegerField(required=False, min_value=1)
    drift_horizon = forms.IntegerField(required=False, min_value=1)
    slope_threshold = forms.FloatField(required=False, validators=[validate_positive])
    step_rule = forms.ChoiceField(required=False, choices=[(s, s) for s in STEP_RULES])
    cases = forms.Field(required=False)


class CaseForm(SectionForm):
    name = forms.CharField(max_length=64)
    rates = FloatListField(required=False)
    load = forms.FloatField(required=False, min_value=0)

    def clean(self) -> Dict[str, Any]:
        cleaned = super().clean()
        has_rates = bool(cleaned.get("rates"))
        has_load = cleaned.get("load") is not None
        if has_rates == has_load:
            raise ValidationError("Give exactly one of 'rates' or 'load'.")
        if has_rates and any(r < 0 for r in cleaned["rates"]):
            self.add_error("rates", "Rates must be nonnegative.")
        return cleaned
