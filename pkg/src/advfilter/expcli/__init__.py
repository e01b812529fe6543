"""Experiment orchestration: configs, splits, protocol runners and the CLI."""
from advfilter.expcli.config import ALPHA_GRID, RATIO_GRID, ExperimentConfig, apply_overrides, load_config
from advfilter.expcli.runners import run_experiment, run_unit, units
from advfilter.expcli.splits import carve_validation, split_cross, split_within

__all__ = [
    "ALPHA_GRID",
    "RATIO_GRID",
    "ExperimentConfig",
    "apply_overrides",
    "carve_validation",
    "load_config",
    "run_experiment",
    "run_unit",
    "split_cross",
    "split_within",
    "units",
]
