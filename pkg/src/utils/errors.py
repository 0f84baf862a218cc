"""
Exception types shared by the protocol, sketch and experiment layers.

Input problems derive from ValueError, aborted runs from RuntimeError, so
callers that only care about the broad category can catch the builtin.
"""

from typing import List, Optional


class InvalidInstanceError(ValueError):
    """Protocol input that no run can be defined on (all-zero, ragged, negative)."""


class UnknownProtocolError(ValueError):
    """Protocol descriptor that is not in the registry."""


class RoundBudgetError(RuntimeError):
    """A protocol tried to use more rounds than it declared."""


class SamplingFailedError(RuntimeError):
    """The additive sampler returned Fail on every retry."""

    def __init__(self, attempts: int, reason: Optional[str] = None):
        self.attempts = attempts
        self.reason = reason
        super().__init__(f"Sampler failed {attempts} times (last reason: {reason})")


class ConformingViolationError(ValueError):
    """The same key (or tag) was found with two different rows."""

    def __init__(self, key):
        self.key = key
        super().__init__(f"Key {key!r} maps to different rows across datasets")


class SketchMismatchError(ValueError):
    """Sketches built with different parameters or salts were combined."""


class MergeBudgetError(ValueError):
    """Not enough hash levels left for the requested merges."""


class MergeFailure(RuntimeError):
    """The merge consistency guard fired; retry with a fresh salt."""

    def __init__(self, key, hash_index: int, new_prob: float, stored_prob: float):
        self.key = key
        self.hash_index = hash_index
        self.new_prob = new_prob
        self.stored_prob = stored_prob
        super().__init__(
            f"Merge guard fired for key {key!r} at hash {hash_index}: "
            f"recomputed probability {new_prob:.6g} exceeds stored {stored_prob:.6g}"
        )


class UndefinedSensitivityError(ValueError):
    """Sensitivities are undefined for a matrix with no nonzero row."""


class ConfigValidationError(ValueError):
    """Experiment configuration with one or more field-level violations."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
