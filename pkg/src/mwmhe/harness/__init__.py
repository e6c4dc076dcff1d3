from .bench import (
    BenchmarkReport, BenchmarkRow, Setup, emit_report, generate_data, resolve_system,
    run_benchmark, run_cell, step_schedule, total_mse,
)
from .config import ExperimentConfig, config_from_dict, load_config
from .synthetic import default_disturbance, synthetic_system

__all__ = [
    "BenchmarkReport", "BenchmarkRow", "ExperimentConfig", "Setup", "config_from_dict",
    "default_disturbance", "emit_report", "generate_data", "load_config", "resolve_system",
    "run_benchmark", "run_cell", "step_schedule", "synthetic_system", "total_mse",
]
