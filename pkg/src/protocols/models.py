"""
Data models and configuration for the coordinator-model protocols.

Defines the inputs, intermediate views and outputs of the additive sampler
and of the two-round function-sum protocol.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from protocols.comm import CommStats
from protocols.randomness import Backend


class FailReason(Enum):
    """Which abort condition of the additive sampler fired."""
    WEAK_MAX = "weak-max"    # top tally below S / (2 C ln^2 n)
    NO_GAP = "no-gap"        # top tally within (1 + eps/2) of the runner-up


@dataclass(frozen=True)
class SampleResult:
    """Outcome of one additive-sampler run: Ok(i_hat, q_hat) or Fail(reason)."""
    ok: bool
    i_hat: Optional[int] = None
    q_hat: Optional[float] = None
    reason: Optional[FailReason] = None
    attempts: int = 1

    @classmethod
    def success(cls, i_hat: int, q_hat: float, attempts: int = 1) -> "SampleResult":
        return cls(ok=True, i_hat=i_hat, q_hat=q_hat, attempts=attempts)

    @classmethod
    def fail(cls, reason: FailReason, attempts: int = 1) -> "SampleResult":
        return cls(ok=False, reason=reason, attempts=attempts)

    @property
    def outcome(self) -> str:
        return "ok" if self.ok else f"fail:{self.reason.value}"


@dataclass
class RandomnessConfig:
    """How shared exponentials are generated."""
    precision_bits: int = 48
    discretization_eps: float = 0.01    # grid ratio is 1 + eps/4
    backend: Backend = Backend.FULL_RANDOM


@dataclass
class SamplerConfig:
    """Configuration for the additive sampler."""
    c_s: float = 1.0              # S = ceil(c_s * eps^-2 * ln^5 n)
    heavy_const: float = 4.0      # C in S / (2 C ln^2 n)
    max_retries: int = 16
    randomness: RandomnessConfig = field(default_factory=RandomnessConfig)


@dataclass
class ProtocolConfig:
    """Configuration for the two-round function-sum protocol."""
    heavy_const: float = 4.0      # C in C ln^2 n
    sample_const: float = 1.0     # hidden constant of the per-server sample count N
    mark_const: float = 66.0      # "probably good" needs |S| >= mark_const * ln n
    max_samples: int = 2 ** 62    # N is capped to stay inside int64
    eps_floor_exponent: float = 0.5   # eps must be at least n^-eps_floor_exponent
    randomness: RandomnessConfig = field(default_factory=RandomnessConfig)


@dataclass(frozen=True)
class ProtocolParams:
    """Constants of one protocol instance, fixed before round 1."""
    n: int
    s: int
    N: int                  # per-server sample count
    A: int                  # q-axis extent of the bucket grid
    B: int                  # total-axis extent used in the sample count
    P_start: float          # q below this is Small
    P_end: float            # q above this is Large
    F_start_ratio: float    # F_start = F_start_ratio * sum_j total_j
    C: float
    PL_size: int
    sqrt_theta: float
    log_n: float
    mark_threshold: float


@dataclass
class CoordinatorView:
    """
    What the coordinator knows after round 1 for one exponential copy.

    Columns are the coordinates of SC (sampled by at least one server), in
    increasing order. values[j, c] is x_{coords[c]}(j) where sampled[j, c]
    is True and zero elsewhere; totals[j] is sum_i e_i^-1 f(x_i(j)).
    """
    coords: np.ndarray      # int, shape (|SC|,)
    sampled: np.ndarray     # bool, shape (s, |SC|)
    values: np.ndarray      # float, shape (s, |SC|)
    totals: np.ndarray      # float, shape (s,)
    copy: int = 0           # which exponential copy-set the view belongs to

    @property
    def support(self) -> np.ndarray:
        """SC as an array of coordinate indices."""
        return self.coords

    @classmethod
    def from_messages(cls, coords: List[np.ndarray], values: List[np.ndarray],
                      totals: np.ndarray, copy: int = 0) -> "CoordinatorView":
        """Assemble the view from per-server (SC_j, values) pairs."""
        nonempty = [c for c in coords if c.size]
        support = np.unique(np.concatenate(nonempty)) if nonempty else np.zeros(0, dtype=np.int64)
        sampled = np.zeros((len(coords), support.size), dtype=bool)
        dense = np.zeros((len(coords), support.size))
        for j, (c, v) in enumerate(zip(coords, values)):
            cols = np.searchsorted(support, c)
            sampled[j, cols] = True
            dense[j, cols] = v
        return cls(coords=support, sampled=sampled, values=dense,
                   totals=np.asarray(totals, dtype=float), copy=copy)


@dataclass(frozen=True)
class XhatEstimate:
    """Per-coordinate x_hat and Est over the coordinates of SC."""
    coords: np.ndarray
    x_hat: np.ndarray
    est: np.ndarray
    bucketed: int = 0         # sampled (server, coordinate) pairs in non-exact buckets
    marked_buckets: int = 0


@dataclass
class CopyDiagnostics:
    """Per-copy bookkeeping of the two-round protocol."""
    support_size: int
    pl_size: int
    output: float
    round1_words: int
    round2_words: int
    bucketed: int = 0
    marked_buckets: int = 0
    argmax_in_support: Optional[bool] = None
    argmax_in_pl: Optional[bool] = None


@dataclass
class FsumOutcome:
    """Result of a function-sum run."""
    estimate: float
    maxima: np.ndarray
    stats: CommStats
    params: ProtocolParams
    diagnostics: List[CopyDiagnostics] = field(default_factory=list)
    peak_records: Optional[int] = None    # largest reservoir held by any server, if streamed

    @property
    def rounds(self) -> int:
        return self.stats.rounds_used

    @property
    def total_words(self) -> int:
        return self.stats.total_words

    def summary(self) -> Dict:
        return {
            "estimate": self.estimate,
            "copies": int(self.maxima.size),
            "rounds": self.rounds,
            "total_words": self.total_words,
            "N": self.params.N,
            "PL_size": self.params.PL_size,
        }
