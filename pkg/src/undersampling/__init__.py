"""Measure how undersampling distorts benchmarking and configuration of stochastic optimizers."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, ParameterError, UnknownConfigError
from .perf import (HittingTimeMatrix, RunTrajectory, TargetSet, aoc, auc, default_target_set,
                   first_hitting_times, trajectory_aoc)
from .selection import RaceOutcome, RaceSpec, TestKind, run_selection
from .store import PerformanceTable, RngSeed, best_by_true_mean, relative_loss, true_mean

__all__ = [
    "ConfigError", "DataError", "ParameterError", "UnknownConfigError",
    "HittingTimeMatrix", "RunTrajectory", "TargetSet", "aoc", "auc", "default_target_set",
    "first_hitting_times", "trajectory_aoc",
    "RaceOutcome", "RaceSpec", "TestKind", "run_selection",
    "PerformanceTable", "RngSeed", "best_by_true_mean", "relative_loss", "true_mean",
]
