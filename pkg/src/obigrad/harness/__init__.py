"""Monte Carlo experiments over the built-in designs."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config_text
from .metrics import ExperimentResult, aggregate, rmse_with_error, wilson_interval
from .reports import emit_reports
from .runner import replication_rngs, run_experiment, run_replication
from .sweep import SweepResult, default_grid, uniform_error_sweep

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "SweepResult",
    "aggregate",
    "default_grid",
    "emit_reports",
    "load_config",
    "parse_config_text",
    "replication_rngs",
    "rmse_with_error",
    "run_experiment",
    "run_replication",
    "uniform_error_sweep",
    "wilson_interval",
]
