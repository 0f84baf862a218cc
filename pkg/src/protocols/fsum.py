"""
Two-round estimation of sum_i f(x_i) in the coordinator model.

With shared exponentials e_i, max_i e_i^-1 f(x_i) is distributed as
sum_i f(x_i) / e, so ln 2 times the median over m independent copies of the
maximum estimates the sum. Each copy recovers its maximum in two rounds:

1. Every server draws N coordinates with probability proportional to
   e_i^-1 f(x_i(j)) and sends the distinct ones with their values and its
   total. The coordinator computes an underestimate x_hat_i for every
   sampled coordinate and keeps the PL_size coordinates with the largest
   Est_i = e_i^-1 f(x_hat_i).
2. The coordinator sends PL to every server, the servers return their
   values on PL, and the coordinator outputs max over PL of e_i^-1 f(x_i).

All m copies share the same two rounds; their messages are concatenated.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from protocols.comm import (
    CommStats, Continue, CoordinatorProtocol, Done, Message, ServerVector, ServerView,
    as_server_vectors, register_protocol, run_coordinator_protocol, scalar_words,
)
from protocols.functions import FnSpec, cf_bound
from protocols.models import (
    CoordinatorView, CopyDiagnostics, FsumOutcome, ProtocolConfig, ProtocolParams, XhatEstimate,
)
from protocols.randomness import ExpStream, gen_exponentials
from protocols.sampler import log_n
from utils.errors import InvalidInstanceError
from utils.seeds import derive_seed, numpy_rng

logger = logging.getLogger(__name__)


def num_copies(eps: float) -> int:
    """m = ceil(16 / eps^2) exponential copies for a 1 +- eps estimate."""
    return int(math.ceil(16.0 / eps ** 2))


def protocol_params(n: int, s: int, fn: FnSpec, config: Optional[ProtocolConfig] = None) -> ProtocolParams:
    """
    Constants of the two-round protocol for n coordinates and s servers.

    The bucket grid runs from P_start to P_end = 4s / (c_f[s] ln^2 n) in
    steps of sqrt(theta). The sample count N follows the requirement that
    every good bucket is hit about 100 ln n times, scaled by
    config.sample_const, and never drops below c_f[s] ln^3 n / s.

    Args:
        n: Number of coordinates
        s: Number of servers
        fn: Function being summed
        config: Protocol configuration

    Returns:
        ProtocolParams
    """
    config = config or ProtocolConfig()
    ln = log_n(n)
    C = config.heavy_const
    cf_s = cf_bound(fn, s)
    eps1, eps2 = fn.eps1, fn.eps2
    sqrt_theta = fn.sqrt_theta

    P_start = eps1 / (cf_s * C * ln ** 2)
    P_end = 4.0 * s / (cf_s * ln ** 2)
    A = max(1, math.ceil(math.log(P_end / P_start) / math.log(sqrt_theta)))

    A_n = max(1, math.ceil(math.log(s / eps1) / math.log(fn.theta)))
    B_n = max(1, math.ceil(math.log(s ** 2 / (eps1 * (1 - eps2))) / math.log(fn.theta)))
    grid = A_n * B_n
    N = (config.sample_const * (cf_s / s) * fn.cf(grid) * grid * sqrt_theta * ln ** 4
         / (eps1 * (1 - eps2) ** 2))
    N = max(N, cf_s * ln ** 3 / s, 1.0)
    N = int(min(math.ceil(N), config.max_samples))

    pl_size = int(math.ceil(C * ln ** 2 * fn.theta_dblprime / (1 - eps2) ** 3))

    return ProtocolParams(
        n=n, s=s, N=N, A=A, B=B_n,
        P_start=P_start, P_end=P_end,
        F_start_ratio=eps1 * (1 - eps2) / (4.0 * C * s ** 2),
        C=C, PL_size=pl_size, sqrt_theta=sqrt_theta, log_n=ln,
        mark_threshold=config.mark_const * ln,
    )


@dataclass(frozen=True)
class Round1Message:
    """Per-copy sampled supports SC_j, the server's values on them, and totals."""
    coords: Tuple[np.ndarray, ...]
    values: Tuple[np.ndarray, ...]
    totals: np.ndarray

    @property
    def words(self) -> int:
        # (index, value) pairs plus one word for the total, per copy
        return int(sum(2 * c.size + 1 for c in self.coords))


def draw_support(fvals: np.ndarray, e: np.ndarray, N: int,
                 rng: np.random.Generator) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    N draws per copy from i ~ e_i^-1 f_i / sum, keeping the distinct indices.

    Args:
        fvals: f(x_i(j)) for the server, shape (n,)
        e: Exponentials, shape (copies, n)
        N: Draws per copy
        rng: Server's private generator

    Returns:
        (sorted support per copy, totals per copy)
    """
    weights = fvals[None, :] / e
    totals = weights.sum(axis=1)
    if not np.any(fvals > 0):
        return [np.zeros(0, dtype=np.int64) for _ in range(e.shape[0])], np.zeros(e.shape[0])
    counts = rng.multinomial(N, weights / totals[:, None])
    return [np.flatnonzero(row) for row in counts], totals


def round1_server_sample(x_j, fn: FnSpec, exps: ExpStream, N: int, seed: int,
                         copy: int = 0) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Round-1 message of one server for one exponential copy.

    Args:
        x_j: The server's vector (ServerVector or array)
        fn: Function being summed
        exps: Shared exponentials; copy c uses indices c*n .. (c+1)*n - 1
        N: Number of draws
        seed: Run seed (the server's private generator derives from it)
        copy: Copy-set index

    Returns:
        (SC_j, x_i(j) for i in SC_j, sum_i e_i^-1 f(x_i(j)))
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    vector = x_j if isinstance(x_j, ServerVector) else ServerVector(np.asarray(x_j, dtype=float), 0)
    n = len(vector)
    e = exps.variates(copy * n + np.arange(n, dtype=np.int64))[None, :]
    rng = numpy_rng(seed, "server", vector.owner, 1)
    coords, totals = draw_support(fn(vector.entries), e, N, rng)
    return coords[0], vector.entries[coords[0]], float(totals[0])


def estimate_xhat(view: CoordinatorView, fn: FnSpec, params: ProtocolParams,
                  exps: ExpStream) -> XhatEstimate:
    """
    Underestimate x_i for every coordinate of SC from round-1 messages.

    Servers whose q_i(j) = e_i^-1 f(x_i(j)) / total_j exceeds P_end are
    credited exactly, servers below P_start or with total below F_start are
    dropped, and the rest are bucketed by (q_i(j), total_j) on a sqrt(theta)
    grid. Buckets whose hit probability makes sampling near certain are
    credited exactly; the others are credited from the number of servers in
    the bucket that sampled i, if that number reaches the marking threshold.

    Returns:
        XhatEstimate over view.coords
    """
    coords = view.coords
    if coords.size == 0:
        empty = np.zeros(0)
        return XhatEstimate(coords=coords, x_hat=empty, est=empty)

    e = exps.variates(view.copy * params.n + coords)
    totals = view.totals
    sampled = view.sampled
    values = view.values
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(sampled, fn(values) / e[None, :] / totals[:, None], 0.0)

    x_hat = np.zeros(coords.size)
    bucketed = marked_count = 0
    large = sampled & (q > params.P_end)
    x_hat += np.where(large, values, 0.0).sum(axis=0)

    f_start = params.F_start_ratio * totals.sum()
    rest = sampled & ~large & (q >= params.P_start) & (totals >= f_start)[:, None]
    if rest.any():
        step = math.log(params.sqrt_theta)
        a = np.floor(np.log(np.where(rest, q, params.P_start) / params.P_start) / step).astype(np.int64)
        with np.errstate(divide="ignore"):
            b_server = np.floor(np.log(np.maximum(totals, f_start) / f_start) / step).astype(np.int64)
        b = np.broadcast_to(b_server[:, None], a.shape)
        hit_bound = params.sqrt_theta ** (a + 1) * params.P_start

        exact = rest & (hit_bound > 4.0 * params.log_n / params.N)
        x_hat += np.where(exact, values, 0.0).sum(axis=0)

        approx = rest & ~exact
        if approx.any():
            bucketed = int(approx.sum())
            rows, cols = np.nonzero(approx)
            keys = np.stack([cols, a[rows, cols], b[rows, cols]], axis=1)
            buckets, counts = np.unique(keys, axis=0, return_counts=True)
            marked = counts >= params.mark_threshold
            if marked.any():
                col, aa, bb = buckets[marked].T
                p_hit = params.sqrt_theta ** (aa + 1) * params.P_start
                hit = -np.expm1(params.N * np.log1p(-p_hit))
                floor_value = fn.inverse(e[col] * params.sqrt_theta ** (aa + bb) * params.P_start * f_start)
                np.add.at(x_hat, col, 0.4 * counts[marked] / hit * floor_value)
                logger.debug(f"Copy {view.copy}: {marked_count} marked buckets")

    return XhatEstimate(coords=coords, x_hat=x_hat, est=fn(x_hat) / e,
                        bucketed=bucketed, marked_buckets=marked_count)


def select_pl(estimate: XhatEstimate, pl_size: int) -> np.ndarray:
    """Top pl_size coordinates by Est, ties toward the smaller index."""
    order = np.lexsort((estimate.coords, -estimate.est))
    return estimate.coords[order[:pl_size]]


@dataclass
class CopyTrace:
    support: np.ndarray
    pl: np.ndarray
    round1_words: int = 0
    bucketed: int = 0
    marked_buckets: int = 0


@register_protocol
class FunctionSumProtocol(CoordinatorProtocol):
    """
    Two-round recovery of max_i e_i^-1 f(x_i) for `copies` exponential copies.

    Subclasses change what a server holds by overriding width, fvalues,
    draw and values_at.
    """
    name = "function-sum"
    round_budget = 2

    def __init__(self, fn: FnSpec, params: ProtocolParams, exps: ExpStream, copies: int):
        if exps.count < copies * params.n:
            raise ValueError(
                f"Exponential stream has {exps.count} variates, need {copies * params.n}"
            )
        self.fn = fn
        self.params = params
        self.exps = exps
        self.copies = copies
        self.trace: List[CopyTrace] = []

    @property
    def width(self) -> int:
        return self.params.n

    def copy_exponentials(self, copy: int, coords: Optional[np.ndarray] = None) -> np.ndarray:
        if coords is None:
            coords = np.arange(self.width, dtype=np.int64)
        return self.exps.variates(copy * self.width + coords)

    def draw(self, view: ServerView) -> Tuple[List[np.ndarray], np.ndarray]:
        """Sampled supports and totals of one server for every copy."""
        e = self.exps.copies(self.copies, self.width)
        return draw_support(self.fn(view.entries), e, self.params.N, view.rng())

    def values_at(self, view: ServerView, coords: np.ndarray) -> np.ndarray:
        """The server's x_i(j) at the given coordinates."""
        return view.entries[coords]

    def server_step(self, view: ServerView) -> Message:
        if view.round_no == 1:
            coords, totals = self.draw(view)
            if not np.any(totals > 0):
                logger.debug(f"Server {view.owner} holds no mass; sending empty samples")
            message = Round1Message(
                coords=tuple(coords),
                values=tuple(self.values_at(view, c) for c in coords),
                totals=totals,
            )
            return Message(message, message.words)

        pls = view.inbox[-1]
        replies = [self.values_at(view, pl) for pl in pls]
        return Message(replies, scalar_words(sum(pl.size for pl in pls)))

    def coordinator_step(self, round_no, replies, rng):
        owners = sorted(replies)
        if round_no == 1:
            messages = [replies[o].payload for o in owners]
            pls = []
            for c in range(self.copies):
                view = CoordinatorView.from_messages(
                    [m.coords[c] for m in messages],
                    [m.values[c] for m in messages],
                    np.array([m.totals[c] for m in messages]),
                    copy=c,
                )
                estimate = self.estimate(view)
                pl = select_pl(estimate, self.params.PL_size)
                self.trace.append(CopyTrace(
                    support=view.coords, pl=pl,
                    round1_words=sum(2 * m.coords[c].size + 1 for m in messages),
                    bucketed=estimate.bucketed, marked_buckets=estimate.marked_buckets,
                ))
                pls.append(pl)
            words = scalar_words(sum(pl.size for pl in pls))
            return Continue({o: Message(pls, words) for o in owners})

        maxima = np.zeros(self.copies)
        for c, trace in enumerate(self.trace):
            if trace.pl.size == 0:
                continue
            x_pl = sum(replies[o].payload[c] for o in owners)
            maxima[c] = float(np.max(self.fn(x_pl) / self.copy_exponentials(c, trace.pl)))
        return Done(maxima)

    def estimate(self, view: CoordinatorView) -> XhatEstimate:
        return estimate_xhat(view, self.fn, self.params, self.exps)


def check_eps(eps: float, n: int, config: ProtocolConfig):
    """
    Reject eps outside (0, 1) or below n^-eps_floor_exponent.

    The default exponent 1/2 gives the looser floor n^-1/2. The stricter
    n^-1/4 regime (eps_floor_exponent=0.25) would reject eps = 0.1 at
    n = 1000, which the default run parameters use.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps out of range (0, 1): {eps}")
    floor = n ** -config.eps_floor_exponent
    if eps < floor:
        raise ValueError(f"eps = {eps} is below the validity floor n^-{config.eps_floor_exponent} = {floor:.4g}")


def recover_max(servers: Sequence, fn: FnSpec, exps: ExpStream, params: ProtocolParams,
                seed: int) -> Tuple[float, CommStats]:
    """
    Two-round recovery of max_i e_i^-1 f(x_i) for a single exponential copy.

    Args:
        servers: Server vectors
        fn: Function being summed
        exps: Shared exponentials, at least n of them
        params: Protocol constants
        seed: Run seed

    Returns:
        (recovered maximum, CommStats)
    """
    vectors = as_server_vectors(servers)
    if float(sum(fn(v.entries).sum() for v in vectors)) <= 0:
        raise InvalidInstanceError("sum_i f(x_i) must be positive")
    protocol = FunctionSumProtocol(fn, params, exps, copies=1)
    maxima, stats = run_coordinator_protocol(vectors, protocol, seed)
    return float(maxima[0]), stats


def copy_diagnostics(protocol: FunctionSumProtocol, maxima: np.ndarray, s: int,
                     truth: Optional[np.ndarray]) -> List[CopyDiagnostics]:
    out = []
    for c, trace in enumerate(protocol.trace):
        diag = CopyDiagnostics(
            support_size=int(trace.support.size),
            pl_size=int(trace.pl.size),
            output=float(maxima[c]),
            round1_words=trace.round1_words,
            round2_words=2 * s * int(trace.pl.size),
            bucketed=trace.bucketed,
            marked_buckets=trace.marked_buckets,
        )
        if truth is not None:
            best = int(np.argmax(protocol.fn(truth) / protocol.copy_exponentials(c)))
            diag.argmax_in_support = bool(np.isin(best, trace.support))
            diag.argmax_in_pl = bool(np.isin(best, trace.pl))
        out.append(diag)
    return out


def run_fsum(servers: Sequence, fn: FnSpec, eps: float, seed: int,
             config: Optional[ProtocolConfig] = None,
             copies: Optional[int] = None) -> FsumOutcome:
    """
    Estimate sum_i f(x_i) to 1 +- eps and keep per-copy diagnostics.

    Args:
        servers: Server vectors x(1), ..., x(s)
        fn: Function to sum
        eps: Accuracy
        seed: Run seed
        config: Protocol configuration
        copies: Number of exponential copies (defaults to ceil(16 / eps^2))

    Returns:
        FsumOutcome
    """
    config = config or ProtocolConfig()
    vectors = as_server_vectors(servers)
    n, s = len(vectors[0]), len(vectors)
    check_eps(eps, n, config)
    truth = np.sum([v.entries for v in vectors], axis=0)
    if float(fn(truth).sum()) <= 0:
        raise InvalidInstanceError("sum_i f(x_i) must be positive")

    m = copies or num_copies(eps)
    params = protocol_params(n, s, fn, config)
    rc = config.randomness
    exps = gen_exponentials(derive_seed(seed, "exponentials"), m * n,
                            rc.precision_bits, rc.discretization_eps, rc.backend)
    logger.debug(f"{fn.name}: n={n} s={s} copies={m} N={params.N} PL_size={params.PL_size}")

    protocol = FunctionSumProtocol(fn, params, exps, m)
    maxima, stats = run_coordinator_protocol(vectors, protocol, seed)
    estimate = math.log(2) * float(np.median(maxima))
    logger.info(f"{fn.name}: estimate {estimate:.6g} in {stats.rounds_used} rounds, "
                f"{stats.total_words} words")
    return FsumOutcome(
        estimate=estimate, maxima=maxima, stats=stats, params=params,
        diagnostics=copy_diagnostics(protocol, maxima, s, truth),
    )


def fsum_estimate(servers: Sequence, fn: FnSpec, eps: float, seed: int,
                  config: Optional[ProtocolConfig] = None) -> Tuple[float, CommStats]:
    """Estimate sum_i f(x_i); returns (estimate, CommStats)."""
    outcome = run_fsum(servers, fn, eps, seed, config)
    return outcome.estimate, outcome.stats


def fk_estimate(servers: Sequence, k: float, eps: float, seed: int,
                config: Optional[ProtocolConfig] = None) -> Tuple[float, CommStats]:
    """
    Estimate the moment F_k = sum_i x_i^k.

    Raises:
        InvalidInstanceError: If k < 1
    """
    if k < 1:
        raise InvalidInstanceError(f"Moment order k must be >= 1, got {k}")
    return fsum_estimate(servers, FnSpec.power(k), eps, seed, config)
