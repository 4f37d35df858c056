"""Discrete-event M/G/n simulation of tail-optimal multiserver scheduling."""

from .distributions import SizeDistribution, SystemParams, parse_dist
from .engine import ConfigError, ExperimentConfig, SimResult
from .fast import simulate
from .policies import parse_policy

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SimResult",
    "SizeDistribution",
    "SystemParams",
    "parse_dist",
    "parse_policy",
    "simulate",
]
