"""
Neighborhood propagation of composable sketches in synchronous rounds.

Round 0: every node u sketches its own dataset, S_u^0. In round i every node
broadcasts S_u^(i-1) to its neighbors and merges what it receives into
S_u^i, a sketch of the union of the datasets at walk distance exactly i.
After Delta rounds a node unions its chain S_u^0..S_u^Delta and solves for
an embedding of its Delta-ball.
"""

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from congest.graph import Graph
from protocols.comm import CommStats, node_entity
from sketches.dataset import Dataset
from sketches.sketch import (
    Sketch,
    SketchParams,
    create_sketch,
    encode_sketch,
    merge_sketches,
    solve_embedding,
    union_for_solve,
    with_salt,
)
from utils.errors import MergeBudgetError, MergeFailure
from utils.seeds import derive_seed

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["node", "round", "rows_sent", "words"]


def delta_budget(num_nodes: int, rounds: int) -> float:
    """Per-merge failure probability 1/(10 s) * (2 s)^-rounds."""
    s = max(num_nodes, 1)
    return 1.0 / (10 * s) * (2 * s) ** (-rounds)


def rows_bound(rounds: int, d: int, num_nodes: int, eps: float, p: float = 2.0, c: float = 4.0) -> float:
    """
    Rows a node may send per round: c Delta d^max(p/2,1) (h + Delta log s) / eps^2.

    h is log d for p = 2 and d log d otherwise.
    """
    d = max(d, 2)
    head = math.log(d) if p == 2 else d * math.log(d)
    return c * rounds * d ** max(p / 2, 1) * (head + rounds * math.log(max(num_nodes, 2))) / eps ** 2


@dataclass
class PropagationConfig:
    """Parameters of one propagation run."""
    rounds: int                         # Delta
    eps: float
    p: float = 2.0
    t: Optional[int] = None             # merge budget, defaults to rounds + 1
    delta: Optional[float] = None       # per-merge delta, defaults to delta_budget
    sketch_const: float = 1.0
    salt: int = 0
    max_retries: int = 8
    jobs: int = 1


@dataclass
class PropagationResult:
    """Final per-node sketches plus the communication ledger."""
    sketches: Dict[Hashable, Sketch]
    stats: CommStats
    report: List[Dict] = field(default_factory=list)
    deliveries: List[Dict] = field(default_factory=list)     # per (round, sender, receiver) digests
    salt: int = 0
    attempts: int = 1
    rounds: int = 0

    def embedding(self, node: Hashable) -> np.ndarray:
        return solve_embedding(self.sketches[node])


def _check(config: PropagationConfig, graph: Graph) -> Tuple[SketchParams, int]:
    if config.rounds < 0:
        raise ValueError(f"Round count must be >= 0, got {config.rounds}")
    t = config.t if config.t is not None else config.rounds + 1
    if t < config.rounds + 1:
        raise MergeBudgetError(
            f"Merge budget t={t} is too small for {config.rounds} rounds; propagation needs t >= rounds + 1"
        )
    if config.rounds and config.eps >= 1.0 / config.rounds:
        raise ValueError(f"eps out of range: propagation over {config.rounds} rounds needs eps < 1/{config.rounds}")
    delta = config.delta if config.delta is not None else delta_budget(len(graph), config.rounds)
    params = SketchParams(eps=config.eps, delta=delta, p=config.p, salt=config.salt,
                          sketch_const=config.sketch_const)
    return params, t


def _run_once(graph: Graph, config: PropagationConfig, params: SketchParams, t: int) -> PropagationResult:
    stats = CommStats()
    report: List[Dict] = []
    deliveries: List[Dict] = []
    nodes = graph.nodes

    with ThreadPoolExecutor(max_workers=max(config.jobs, 1)) as pool:
        current: Dict[Hashable, Optional[Sketch]] = dict(zip(
            nodes, pool.map(lambda u: create_sketch(graph.datasets[u], t, params), nodes)
        ))
        chains: Dict[Hashable, List[Sketch]] = {u: [current[u]] for u in nodes}

        for round_no in range(1, config.rounds + 1):
            inbox: Dict[Hashable, List[Sketch]] = {u: [] for u in nodes}
            for u in nodes:
                sk = current[u]
                degree = graph.degree(u)
                if sk is None:
                    report.append({"node": u, "round": round_no, "rows_sent": 0, "words": 0})
                    continue
                message = sk.to_bytes()
                rows, words = sk.size()
                stats.charge(node_entity(u), round_no, degree * words)
                report.append({"node": u, "round": round_no,
                               "rows_sent": rows if degree else 0, "words": degree * words})
                sent_digest = hashlib.sha256(message).hexdigest()
                for v in graph.neighbors(u):
                    received = Sketch.from_bytes(message)
                    inbox[v].append(received)
                    deliveries.append({"round": round_no, "sender": u, "receiver": v,
                                       "sent_digest": sent_digest,
                                       "received_digest": hashlib.sha256(encode_sketch(received)).hexdigest()})

            def step(u):
                return merge_sketches(inbox[u]) if inbox[u] else None

            current = dict(zip(nodes, pool.map(step, nodes)))
            for u in nodes:
                if current[u] is not None:
                    chains[u].append(current[u])
            logger.debug(f"Round {round_no}: {stats.words_in_round(round_no)} words")

        finals = dict(zip(nodes, pool.map(lambda u: union_for_solve(chains[u]), nodes)))

    stats.rounds_used = config.rounds
    return PropagationResult(sketches=finals, stats=stats, report=report, deliveries=deliveries,
                             salt=params.salt, rounds=config.rounds)


def propagate(graph: Graph, config: PropagationConfig) -> PropagationResult:
    """
    Run Delta rounds of sketch propagation so every node can solve for its ball.

    A merge failure reruns the whole propagation under a salt derived from
    the configured one; every node must share the salt for sketches to merge.

    Args:
        graph: Nodes with conforming datasets
        config: Rounds, accuracy and sketch parameters

    Returns:
        PropagationResult with one t = 1 sketch per node

    Raises:
        MergeBudgetError: If t <= rounds
        ValueError: If eps >= 1 / rounds
        MergeFailure: If every retry hit the merge guard
    """
    params, t = _check(config, graph)
    logger.info(f"Propagating over {len(graph)} nodes for {config.rounds} rounds "
                f"(t={t}, eps={config.eps}, delta={params.delta:.3g})")
    last: Optional[MergeFailure] = None
    for attempt in range(config.max_retries + 1):
        salt = config.salt if attempt == 0 else derive_seed(config.salt, "retry", attempt)
        try:
            result = _run_once(graph, config, with_salt(params, salt), t)
        except MergeFailure as exc:
            last = exc
            logger.warning(f"Merge guard fired on attempt {attempt + 1} ({exc}); retrying with a fresh salt")
            continue
        result.attempts = attempt + 1
        logger.info(f"Propagation done: {result.stats.total_words} words, attempts={result.attempts}")
        return result
    raise last


def per_node_comm_report(result: PropagationResult) -> pd.DataFrame:
    """One row per (node, round): rows in the broadcast sketch and words sent over all edges."""
    df = pd.DataFrame(result.report, columns=REPORT_COLUMNS)
    df["node"] = df["node"].astype(str)
    return df


def write_comm_report(result: PropagationResult, path: Union[str, Path]):
    per_node_comm_report(result).to_csv(path, index=False)


def write_embeddings(result: PropagationResult, directory: Union[str, Path]) -> List[Path]:
    """Write each node's weighted embedding rows to embedding_<node>.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for node, sk in result.sketches.items():
        sample = sk.samples[0]
        path = directory / f"embedding_{node}.csv"
        Dataset.from_rows(list(sample.keys), solve_embedding(sk), sk.d).to_csv(path)
        paths.append(path)
    return paths
