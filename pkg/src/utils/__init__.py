"""Seeds, error types and statistics helpers."""

from utils.errors import (
    ConfigValidationError,
    ConformingViolationError,
    InvalidInstanceError,
    MergeBudgetError,
    MergeFailure,
    RoundBudgetError,
    SamplingFailedError,
    SketchMismatchError,
    UndefinedSensitivityError,
    UnknownProtocolError,
)
from utils.seeds import derive_seed, expand_seed, format_seed, numpy_rng, parse_seed
from utils.stats import ks_distance, ks_two_sample, relative_error, success_fraction, tv_distance

__all__ = [
    'ConfigValidationError',
    'ConformingViolationError',
    'InvalidInstanceError',
    'MergeBudgetError',
    'MergeFailure',
    'RoundBudgetError',
    'SamplingFailedError',
    'SketchMismatchError',
    'UndefinedSensitivityError',
    'UnknownProtocolError',
    'derive_seed',
    'expand_seed',
    'format_seed',
    'numpy_rng',
    'parse_seed',
    'ks_distance',
    'ks_two_sample',
    'relative_error',
    'success_fraction',
    'tv_distance',
]
