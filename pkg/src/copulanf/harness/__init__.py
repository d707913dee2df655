"""Experiment protocol, configuration and file emission."""
from .config import BaseSpec, ConfigError, ExperimentConfig, TargetSpec, load_config, parse_config
from .experiment import (
    SweepSummary,
    TrialResult,
    export_quantiles,
    generate_target,
    load_sweep_tables,
    run_surface_report,
    run_sweep,
    run_trial,
    summarize,
)
from .io import LayoutError, read_params, write_params

__all__ = [
    "BaseSpec", "ConfigError", "ExperimentConfig", "TargetSpec", "load_config", "parse_config",
    "SweepSummary", "TrialResult", "export_quantiles", "generate_target", "load_sweep_tables",
    "run_surface_report", "run_sweep", "run_trial", "summarize",
    "LayoutError", "read_params", "write_params",
]
