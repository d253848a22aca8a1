"""Experiment harness: configuration, ensembles, sweeps, validation, reports, CLI."""
from .config import ConfigError, ExperimentConfig, load_config, validate_config
from .ensemble import RunResult, alpha_sweep, run_ensemble, trend_table
from .report import ReportError, emit_report, load_results, save_results
from .validate import validate

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "validate_config", "RunResult", "alpha_sweep",
           "run_ensemble", "trend_table", "ReportError", "emit_report", "load_results", "save_results",
           "validate"]
