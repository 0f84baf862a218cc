"""
One-round sampling from an additively defined distribution.

Server j holds a nonnegative vector p(j); the target distribution is
q_i = sum_j p_i(j) / sum_{i,j} p_i(j). With shared exponentials e_i, each
server draws 2S coordinates from its own distribution of e_i^-1 p_i(j) and
sends them with its two totals. The coordinator merges the first S draws of
the union into tallies X and the second S into tallies Y, aborts unless X
has a clear heavy hitter, and otherwise reports argmax Y together with an
estimate of its probability.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from protocols.comm import (
    CommStats, CoordinatorProtocol, Done, Message, ServerView,
    as_server_vectors, register_protocol, run_coordinator_protocol, scalar_words,
)
from protocols.models import FailReason, SampleResult, SamplerConfig
from protocols.randomness import ExpStream, gen_exponentials
from utils.errors import ConformingViolationError, InvalidInstanceError, SamplingFailedError
from utils.seeds import derive_seed

logger = logging.getLogger(__name__)


def log_n(n: int) -> float:
    """Natural log of n, floored at 1."""
    return max(math.log(n), 1.0) if n > 0 else 1.0


def sample_size(n: int, eps: float, c_s: float = 1.0) -> int:
    """S = ceil(c_s * eps^-2 * ln^5 n), draws per server per half."""
    return int(math.ceil(c_s * eps ** -2 * log_n(n) ** 5))


@dataclass(frozen=True)
class ServerSample:
    """Round-1 message of the additive sampler."""
    counts: np.ndarray        # histogram of the 2S draws over coordinates
    total: float              # sum_i p_i(j)
    scaled_total: float       # sum_i e_i^-1 p_i(j)


@register_protocol
class AdditiveSamplerProtocol(CoordinatorProtocol):
    """Single-attempt additive sampler as a one-round coordinator protocol."""
    name = "additive-sampler"
    round_budget = 1

    def __init__(self, n: int, eps: float, exps: ExpStream, config: SamplerConfig):
        self.n = n
        self.eps = eps
        self.config = config
        self.S = sample_size(n, eps, config.c_s)
        self.e = exps.variates(np.arange(n, dtype=np.int64))

    def server_step(self, view: ServerView) -> Message:
        weights = view.entries / self.e
        scaled_total = float(weights.sum())
        if scaled_total > 0:
            counts = view.rng().multinomial(2 * self.S, weights / scaled_total)
            words = scalar_words(2 * self.S + 2)
        else:
            counts = np.zeros(self.n, dtype=np.int64)
            words = scalar_words(2)
        return Message(ServerSample(counts, float(view.entries.sum()), scaled_total), words)

    def coordinator_step(self, round_no, replies: Mapping[int, Message], rng):
        samples = [replies[owner].payload for owner in sorted(replies)]
        scaled = np.array([m.scaled_total for m in samples])
        weight_total = scaled.sum()
        mass_total = sum(m.total for m in samples)

        # Union draws: each half takes S draws, server j chosen w.p. its scaled total.
        first = rng.multinomial(self.S, scaled / weight_total)
        second = rng.multinomial(self.S, scaled / weight_total)
        X = np.zeros(self.n, dtype=np.int64)
        Y = np.zeros(self.n, dtype=np.int64)
        for sample, k1, k2 in zip(samples, first, second):
            if k1 + k2 == 0:
                continue
            remaining = sample.counts.copy()
            if k1:
                drawn = rng.multivariate_hypergeometric(remaining, int(k1))
                X += drawn
                remaining -= drawn
            if k2:
                Y += rng.multivariate_hypergeometric(remaining, int(k2))

        top_two = np.sort(X)[-2:] if self.n > 1 else np.array([0, X[0]])
        x_first, x_second = int(top_two[-1]), int(top_two[0])
        threshold = self.S / (2 * self.config.heavy_const * log_n(self.n) ** 2)
        if x_first < threshold:
            return Done(SampleResult.fail(FailReason.WEAK_MAX))
        if x_first <= (1 + self.eps / 2) * x_second:
            return Done(SampleResult.fail(FailReason.NO_GAP))

        i_hat = int(np.argmax(Y))
        q_hat = float(self.e[i_hat] * (Y[i_hat] / self.S) * weight_total / mass_total)
        return Done(SampleResult.success(i_hat, q_hat))


def sample_additive(servers: Sequence, eps: float, seed: int,
                    config: Optional[SamplerConfig] = None,
                    max_retries: Optional[int] = None) -> Tuple[SampleResult, CommStats]:
    """
    Sample a coordinate from the additive distribution with a probability estimate.

    Each attempt is one round. A Fail outcome is retried with a seed derived
    from (seed, attempt) up to max_retries attempts; the last Fail is returned
    if none succeeds.

    Args:
        servers: Nonnegative vectors p(j), one per server
        eps: Accuracy in (0, 1/4)
        seed: Run seed; exponentials and private draws derive from it
        config: Sampler configuration
        max_retries: Attempts before giving up (defaults to config.max_retries)

    Returns:
        (SampleResult, CommStats with words summed over attempts and the
        rounds of a single attempt; result.attempts counts the attempts)

    Raises:
        InvalidInstanceError: If every entry is zero
    """
    config = config or SamplerConfig()
    if not 0 < eps < 0.25:
        raise ValueError(f"eps must be in (0, 1/4), got {eps}")
    vectors = as_server_vectors(servers)
    if sum(float(v.entries.sum()) for v in vectors) <= 0:
        raise InvalidInstanceError("Additive sampler needs a nonzero input")

    n = len(vectors[0])
    attempts = max_retries or config.max_retries
    total = CommStats()
    result = None
    for attempt in range(attempts):
        attempt_seed = seed if attempt == 0 else derive_seed(seed, "attempt", attempt)
        rc = config.randomness
        exps = gen_exponentials(derive_seed(attempt_seed, "exponentials"), n,
                                rc.precision_bits, rc.discretization_eps, rc.backend)
        protocol = AdditiveSamplerProtocol(n, eps, exps, config)
        result, stats = run_coordinator_protocol(vectors, protocol, attempt_seed)
        total.merge(stats)
        if result.ok:
            break
        logger.debug(f"Sampler attempt {attempt + 1} failed: {result.reason.value}")

    result = SampleResult(result.ok, result.i_hat, result.q_hat, result.reason, attempt + 1)
    if not result.ok and attempts > 1:
        logger.warning(f"Additive sampler failed {attempts} times; last reason {result.reason.value}")
    return result, total


def leverage_table(tagged_matrices: Sequence[Mapping[Hashable, Sequence[float]]]) -> Tuple[List, List[np.ndarray]]:
    """
    Per-server leverage scores over a common tag index.

    Returns:
        (tags in first-appearance order, one score vector per server)

    Raises:
        ConformingViolationError: If a tag maps to different rows on two servers
    """
    from sketches.sensitivity import leverage_scores

    rows: Dict[Hashable, np.ndarray] = {}
    for matrix in tagged_matrices:
        for tag, row in matrix.items():
            row = np.asarray(row, dtype=float)
            seen = rows.get(tag)
            if seen is None:
                rows[tag] = row
            elif seen.shape != row.shape or not np.array_equal(seen, row):
                raise ConformingViolationError(tag)

    tags = list(rows)
    index = {tag: i for i, tag in enumerate(tags)}
    vectors = []
    for matrix in tagged_matrices:
        p = np.zeros(len(tags))
        if matrix:
            local_tags = list(matrix)
            A = np.vstack([np.asarray(matrix[t], dtype=float) for t in local_tags])
            p[[index[t] for t in local_tags]] = leverage_scores(A)
        vectors.append(p)
    return tags, vectors


def dedup_leverage_sample(tagged_matrices: Sequence[Mapping[Hashable, Sequence[float]]], seed: int,
                          eps: float = 0.1, config: Optional[SamplerConfig] = None) -> Tuple[Hashable, float]:
    """
    Sample a tag from an approximate leverage-score distribution of the
    deduplicated union of the servers' matrices.

    Server j uses the leverage scores of its own rows, so a row held by
    several servers gets the sum of its per-server scores.

    Args:
        tagged_matrices: One mapping tag -> row per server
        seed: Run seed
        eps: Sampler accuracy
        config: Sampler configuration

    Returns:
        (sampled tag, estimated sampling probability)

    Raises:
        ConformingViolationError: On a tag conflict
        SamplingFailedError: If every retry failed
    """
    config = config or SamplerConfig()
    tags, vectors = leverage_table(tagged_matrices)
    result, stats = sample_additive(vectors, eps, seed, config)
    if not result.ok:
        raise SamplingFailedError(result.attempts, result.reason.value)
    logger.debug(f"Leverage sample {tags[result.i_hat]!r} q_hat={result.q_hat:.4g} words={stats.total_words}")
    return tags[result.i_hat], result.q_hat
