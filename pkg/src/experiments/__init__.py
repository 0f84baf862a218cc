"""Experiment runner and command-line driver."""

from experiments.runner import ExperimentRunner, ResultTable, SweepTable, run_experiment, run_sweep

__all__ = [
    'ExperimentRunner',
    'ResultTable',
    'SweepTable',
    'run_experiment',
    'run_sweep',
]
