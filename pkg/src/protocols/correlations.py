"""
Higher-order correlations through the function-sum protocol.

Server j holds a set W_j of nonnegative n-dimensional rows. For a k-tuple
t = (i_1, ..., i_k) of distinct coordinates let
w_t(j) = sum_{v in W_j} g(v_{i_1}, ..., v_{i_k}); the target is
M = sum_t f(sum_j w_t(j)) over all n! / (n-k)! ordered tuples.

Servers never materialise w(j). Tuples are visited in lexicographic order,
the exponential of tuple t in copy c is variate c * r + rank(t) of a
Nisan-backed stream, and N draws are collected by a weighted reservoir kept
as a compressed histogram.
"""

import itertools
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from protocols.comm import ServerView, register_protocol, run_coordinator_protocol
from protocols.fsum import FunctionSumProtocol, check_eps, copy_diagnostics, num_copies, protocol_params
from protocols.functions import FnSpec
from protocols.models import FsumOutcome, ProtocolConfig
from protocols.randomness import Backend, gen_exponentials
from utils.errors import InvalidInstanceError
from utils.seeds import derive_seed

logger = logging.getLogger(__name__)

TupleFn = Callable[[np.ndarray], np.ndarray]

# numpy's hypergeometric samplers need totals below this
HYPERGEOMETRIC_LIMIT = 10 ** 9
STREAM_CHUNK = 1024

G_REGISTRY: Dict[str, TupleFn] = {
    "product": lambda v: np.prod(v, axis=-1),
    "sum": lambda v: np.sum(v, axis=-1),
    "min": lambda v: np.min(v, axis=-1),
    "max": lambda v: np.max(v, axis=-1),
}


def tuple_count(n: int, k: int) -> int:
    """Number of ordered k-tuples of distinct coordinates, n! / (n-k)!."""
    return math.perm(n, k)


def unrank_tuple(rank: int, n: int, k: int) -> Tuple[int, ...]:
    """The tuple at position rank in itertools.permutations(range(n), k) order."""
    if not 0 <= rank < tuple_count(n, k):
        raise IndexError(f"Tuple rank {rank} out of range for n={n}, k={k}")
    unused = list(range(n))
    out = []
    for pos in range(k):
        block = math.perm(n - pos - 1, k - pos - 1)
        idx, rank = divmod(rank, block)
        out.append(unused.pop(idx))
    return tuple(out)


def tuple_weights(rows: np.ndarray, tuples: np.ndarray, g: TupleFn) -> np.ndarray:
    """w_t(j) = sum over rows v of g(v[t]) for each tuple t (shape (T, k))."""
    if rows.shape[0] == 0 or len(tuples) == 0:
        return np.zeros(len(tuples))
    return g(rows[:, tuples]).sum(axis=0)


def remove_slots(rng: np.random.Generator, counts: np.ndarray, k: int) -> np.ndarray:
    """
    Choose k of the slots summarised by counts uniformly without replacement.

    Exact multivariate hypergeometric below HYPERGEOMETRIC_LIMIT total
    slots. Above it a multinomial draw stands in for the hypergeometric one;
    if that overshoots some count, sequential binomial marginals clipped to
    stay feasible are used instead.
    """
    total = int(counts.sum())
    if total < HYPERGEOMETRIC_LIMIT:
        return rng.multivariate_hypergeometric(counts, k)

    removed = rng.multinomial(k, counts / total)
    if np.all(removed <= counts):
        return removed

    removed = np.zeros_like(counts)
    left, remaining = k, total
    for idx, cnt in enumerate(counts):
        if left == 0:
            break
        cnt = int(cnt)
        rest = remaining - cnt
        take = int(rng.binomial(left, cnt / remaining)) if rest else left
        take = min(max(take, left - rest), cnt, left)
        removed[idx] = take
        left -= take
        remaining = rest
    return removed


class WeightedReservoir:
    """
    N independent single-item weighted reservoirs, stored as a histogram.

    Offering an item of weight w replaces each slot with probability
    w / (total weight so far); the number replaced is Binomial(N, rho) and
    the replaced slots are a uniform subset of the current ones. Items must
    be offered at most once each.
    """

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.total_weight = 0.0
        self.items = np.zeros(0, dtype=np.int64)
        self.counts = np.zeros(0, dtype=np.int64)
        self.peak_records = 0

    def offer(self, item: int, weight: float):
        if weight <= 0:
            return
        self.total_weight += weight
        replaced = int(self.rng.binomial(self.size, weight / self.total_weight))
        if replaced == 0:
            return
        if self.counts.size:
            self.counts = self.counts - remove_slots(self.rng, self.counts, replaced)
            keep = self.counts > 0
            self.items, self.counts = self.items[keep], self.counts[keep]
        self.items = np.append(self.items, item)
        self.counts = np.append(self.counts, replaced)
        self.peak_records = max(self.peak_records, int(self.items.size))

    def support(self) -> np.ndarray:
        return np.sort(self.items)


@register_protocol
class CorrelationSumProtocol(FunctionSumProtocol):
    """Function-sum protocol over the implicit tuple vectors w(j)."""
    name = "correlation-sum"
    ragged_inputs = True

    def __init__(self, fn: FnSpec, params, exps, copies: int, dims: int, k: int, g: TupleFn):
        super().__init__(fn, params, exps, copies)
        self.dims = dims
        self.k = k
        self.g = g
        self.peak_records = 0

    def rows(self, view: ServerView) -> np.ndarray:
        return view.entries.reshape(-1, self.dims)

    def draw(self, view: ServerView):
        rows = self.rows(view)
        rng = view.rng()
        r = self.width
        supports, totals = [], np.zeros(self.copies)
        for c in range(self.copies):
            reservoir = WeightedReservoir(self.params.N, rng)
            stream = itertools.permutations(range(self.dims), self.k)
            for start in range(0, r, STREAM_CHUNK):
                chunk = np.array(list(itertools.islice(stream, STREAM_CHUNK)), dtype=np.int64)
                weights = tuple_weights(rows, chunk, self.g)
                e = self.exps.variates(c * r + np.arange(start, start + len(chunk), dtype=np.int64))
                for offset, w in enumerate(weights / e):
                    reservoir.offer(start + offset, float(w))
            supports.append(reservoir.support())
            totals[c] = reservoir.total_weight
            self.peak_records = max(self.peak_records, reservoir.peak_records)
        return supports, totals

    def values_at(self, view: ServerView, coords: np.ndarray) -> np.ndarray:
        tuples = np.array([unrank_tuple(int(t), self.dims, self.k) for t in coords], dtype=np.int64)
        return tuple_weights(self.rows(view), tuples.reshape(-1, self.k), self.g)


def _as_rows(W: Sequence, dims: Optional[int]) -> Tuple[List[np.ndarray], int]:
    sets = [np.atleast_2d(np.asarray(w, dtype=float)) if np.size(w) else None for w in W]
    if dims is None:
        shapes = {m.shape[1] for m in sets if m is not None}
        if len(shapes) != 1:
            raise InvalidInstanceError(f"Row sets must share one dimension, got {sorted(shapes)}")
        dims = shapes.pop()
    out = []
    for j, m in enumerate(sets):
        m = np.zeros((0, dims)) if m is None else m
        if m.shape[1] != dims:
            raise InvalidInstanceError(f"Server {j}: rows have {m.shape[1]} columns, expected {dims}")
        if np.any(m < 0):
            raise InvalidInstanceError(f"Server {j}: rows must be nonnegative")
        out.append(m)
    return out, dims


def resolve_g(g) -> TupleFn:
    if callable(g):
        return g
    try:
        return G_REGISTRY[g]
    except KeyError:
        raise ValueError(f"Unknown tuple function {g!r}; choose from {sorted(G_REGISTRY)}")


def run_correlation(W: Sequence, fn: FnSpec, g, k: int, eps: float, seed: int,
                    config: Optional[ProtocolConfig] = None, dims: Optional[int] = None,
                    copies: Optional[int] = None) -> FsumOutcome:
    """
    Estimate M(f, g, W_1, ..., W_s) and report the servers' peak reservoir size.

    Args:
        W: Per-server row sets, each of shape (|W_j|, n)
        fn: Outer function f
        g: Tuple function (callable over the last axis, or a G_REGISTRY name)
        k: Tuple order
        eps: Accuracy
        seed: Run seed
        config: Protocol configuration; exponentials always use the Nisan backend
        dims: Row dimension n when every W_j is empty-shaped
        copies: Number of exponential copies (defaults to ceil(16 / eps^2))

    Returns:
        FsumOutcome with peak_records set
    """
    config = config or ProtocolConfig()
    g = resolve_g(g)
    rows, n = _as_rows(W, dims)
    if k < 1:
        raise InvalidInstanceError(f"Tuple order must be >= 1, got {k}")
    if k > n:
        raise InvalidInstanceError(f"Tuple order k={k} exceeds dimension n={n}")
    if not any(m.shape[0] for m in rows):
        raise InvalidInstanceError("Every server holds an empty row set")

    r = tuple_count(n, k)
    check_eps(eps, r, config)
    m = copies or num_copies(eps)
    params = protocol_params(r, len(rows), fn, config)
    rc = config.randomness
    exps = gen_exponentials(derive_seed(seed, "exponentials"), m * r,
                            min(rc.precision_bits, 61), rc.discretization_eps, Backend.NISAN_PRG)

    protocol = CorrelationSumProtocol(fn, params, exps, m, n, k, g)
    maxima, stats = run_coordinator_protocol([w.ravel() for w in rows], protocol, seed)
    estimate = math.log(2) * float(np.median(maxima))
    logger.info(f"Correlation k={k} over {r} tuples: estimate {estimate:.6g}, "
                f"{stats.total_words} words, peak reservoir {protocol.peak_records}")
    return FsumOutcome(
        estimate=estimate, maxima=maxima, stats=stats, params=params,
        diagnostics=copy_diagnostics(protocol, maxima, len(rows), None),
        peak_records=protocol.peak_records,
    )


def higher_order_correlation(W: Sequence, fn: FnSpec, g, k: int, eps: float, seed: int,
                             config: Optional[ProtocolConfig] = None) -> float:
    """Estimate M(f, g, W_1, ..., W_s) = sum over distinct k-tuples t of f(sum_j w_t(j))."""
    return run_correlation(W, fn, g, k, eps, seed, config).estimate


def brute_force_correlation(W: Sequence, fn: FnSpec, g, k: int) -> float:
    """M(f, g, W) by full tuple enumeration."""
    g = resolve_g(g)
    rows, n = _as_rows(W, None)
    tuples = np.array(list(itertools.permutations(range(n), k)), dtype=np.int64).reshape(-1, k)
    w = sum(tuple_weights(m, tuples, g) for m in rows)
    return float(fn(w).sum())
