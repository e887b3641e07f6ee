"""Counting orbits of affine contraction systems, deterministically and in random environments."""
from .counting import (
    CompositionTable,
    Threshold,
    build_composition_table,
    count_deterministic,
    count_random,
    counting_series,
)
from .environment import EnvironmentSpec, realize, validate_environment
from .errors import ConfigError, CountingError, RandCountError, SeriesError, SpecError
from .symbolic import SystemSpec, full_shift, golden_mean, validate_system
from .thermo import delta, delta_Lambda, pressure

__all__ = [
    "CompositionTable",
    "ConfigError",
    "CountingError",
    "EnvironmentSpec",
    "RandCountError",
    "SeriesError",
    "SpecError",
    "SystemSpec",
    "Threshold",
    "build_composition_table",
    "count_deterministic",
    "count_random",
    "counting_series",
    "delta",
    "delta_Lambda",
    "full_shift",
    "golden_mean",
    "pressure",
    "realize",
    "validate_environment",
    "validate_system",
]
