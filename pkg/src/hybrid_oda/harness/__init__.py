"""Experiment runner, metrics, plots and command line interface."""
from .experiment import (
    ExperimentConfig,
    RunReport,
    evaluate_mode_accuracy,
    match_modes,
    preset_identifier,
    run_experiment,
)

__all__ = ["ExperimentConfig", "RunReport", "evaluate_mode_accuracy", "match_modes",
           "preset_identifier", "run_experiment"]
