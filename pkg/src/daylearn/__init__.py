"""daylearn: a sequential-learning harness for small image classifiers.

Trains a persistent CNN on simulated day-by-day data arrival, with
optional pre-training, two day-local validation strategies, and
hold-out-free training-progress heuristics.
"""

from . import cli, config, data, metrics, nn, protocol, schedule
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DaylearnError,
    NumericError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "cli",
    "config",
    "data",
    "metrics",
    "nn",
    "protocol",
    "schedule",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DaylearnError",
    "NumericError",
    "UsageError",
]
