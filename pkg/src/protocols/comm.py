"""
Simulated message-passing substrate with exact communication accounting.

A coordinator protocol is a pair of round functions. Each round the
substrate hands every server a read-only ServerView (its own vector, the
shared seed, its private generator for the round and the coordinator
messages from earlier rounds), charges the server's reply at its declared
width, and passes the replies to the coordinator step, which either sends
the next round's messages or finishes with the output.

Cost model: one word is 64 bits; a real, an index and a key id are one word
each; a set costs its cardinality plus one framing word.
"""

import logging
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Type, Union

import numpy as np
import pandas as pd

from utils.errors import InvalidInstanceError, RoundBudgetError, UnknownProtocolError
from utils.seeds import numpy_rng

logger = logging.getLogger(__name__)

BITS_PER_WORD = 64
COORDINATOR = "coordinator"


def server_entity(owner: int) -> str:
    return f"server-{owner}"


def node_entity(node) -> str:
    return f"node-{node}"


# Word widths

def scalar_words(count: int = 1) -> int:
    """Reals, indices and key ids cost one word each."""
    return count


def pair_words(count: int) -> int:
    """(index, value) pairs cost two words each."""
    return 2 * count


def set_words(cardinality: int) -> int:
    """A set costs its cardinality plus one framing word."""
    return cardinality + 1


@dataclass
class CommStats:
    """Per-entity, per-round word counters of one run."""
    words_sent: Dict[Tuple[str, int], int] = field(default_factory=lambda: defaultdict(int))
    bits_per_word: int = BITS_PER_WORD
    rounds_used: int = 0

    def charge(self, entity: str, round_no: int, words: int) -> "CommStats":
        """Add words to the (entity, round) counter."""
        if words < 0:
            raise ValueError(f"Cannot charge a negative word count ({words})")
        if words:
            self.words_sent[(entity, round_no)] += int(words)
        return self

    @property
    def total_words(self) -> int:
        return int(sum(self.words_sent.values()))

    @property
    def total_bits(self) -> int:
        return self.total_words * self.bits_per_word

    def words_for(self, entity: str) -> int:
        return int(sum(w for (e, _), w in self.words_sent.items() if e == entity))

    def words_in_round(self, round_no: int) -> int:
        return int(sum(w for (_, r), w in self.words_sent.items() if r == round_no))

    def merge(self, other: "CommStats") -> "CommStats":
        """Add another run's counters into this one."""
        for key, words in other.words_sent.items():
            self.words_sent[key] += words
        self.rounds_used = max(self.rounds_used, other.rounds_used)
        return self

    def to_frame(self) -> pd.DataFrame:
        """Counters as a DataFrame with columns entity, round, words."""
        rows = [
            {"entity": entity, "round": round_no, "words": words}
            for (entity, round_no), words in sorted(self.words_sent.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        ]
        return pd.DataFrame(rows, columns=["entity", "round", "words"])

    def to_csv(self, path: str, **kwargs):
        """Save counters to CSV."""
        self.to_frame().to_csv(path, index=False, **kwargs)

    @classmethod
    def from_csv(cls, path: str, rounds_used: Optional[int] = None) -> "CommStats":
        """Load counters written by to_csv."""
        df = pd.read_csv(path)
        missing = [col for col in ("entity", "round", "words") if col not in df.columns]
        if missing:
            raise ValueError(f"Missing required columns: {missing}")
        stats = cls()
        for row in df.itertuples(index=False):
            stats.charge(str(row.entity), int(row.round), int(row.words))
        stats.rounds_used = rounds_used if rounds_used is not None else int(df["round"].max()) if len(df) else 0
        return stats


def charge(stats: CommStats, entity: str, round_no: int, words: int) -> CommStats:
    """Functional form of CommStats.charge."""
    return stats.charge(entity, round_no, words)


@dataclass(frozen=True)
class ServerVector:
    """Dense nonnegative vector x(j) held by server `owner`."""
    entries: np.ndarray
    owner: int

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim != 1:
            raise InvalidInstanceError(f"Server {self.owner}: entries must be one-dimensional")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise InvalidInstanceError(f"Server {self.owner}: entries must be finite and nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    def __len__(self) -> int:
        return self.entries.size


def as_server_vectors(servers: Sequence[Union[ServerVector, Sequence[float], np.ndarray]],
                      equal_length: bool = True) -> List[ServerVector]:
    """Wrap raw vectors as ServerVectors and, by default, check they have a common length."""
    vectors = [
        s if isinstance(s, ServerVector) else ServerVector(np.asarray(s, dtype=float), owner)
        for owner, s in enumerate(servers)
    ]
    if not vectors:
        raise InvalidInstanceError("At least one server is required")
    lengths = {len(v) for v in vectors}
    if equal_length and len(lengths) != 1:
        raise InvalidInstanceError(f"Server vectors have different lengths: {sorted(lengths)}")
    return vectors


@dataclass(frozen=True)
class Message:
    """A payload and the number of words it costs on the wire."""
    payload: Any
    words: int


@dataclass(frozen=True)
class ServerView:
    """Everything server logic may read in a round."""
    owner: int
    entries: np.ndarray
    seed: int
    round_no: int
    inbox: Tuple[Any, ...]     # coordinator payloads from rounds < round_no

    def rng(self, *labels) -> np.random.Generator:
        """Private generator of this server for this round."""
        return numpy_rng(self.seed, "server", self.owner, self.round_no, *labels)


@dataclass(frozen=True)
class Continue:
    """Coordinator outcome: send these messages and run another round."""
    messages: Mapping[int, Message]


@dataclass(frozen=True)
class Done:
    """Coordinator outcome: the run is over."""
    output: Any


class CoordinatorProtocol(ABC):
    """Round functions of a coordinator-model protocol."""
    name: str = ""
    round_budget: int = 1
    ragged_inputs: bool = False    # servers may hold inputs of different lengths

    @abstractmethod
    def server_step(self, view: ServerView) -> Message:
        """Server logic for one round."""

    @abstractmethod
    def coordinator_step(self, round_no: int, replies: Mapping[int, Message],
                         rng: np.random.Generator) -> Union[Continue, Done]:
        """Coordinator logic for one round."""


PROTOCOL_REGISTRY: Dict[str, Type[CoordinatorProtocol]] = {}


def register_protocol(cls: Type[CoordinatorProtocol]) -> Type[CoordinatorProtocol]:
    """Class decorator adding a protocol to the registry under cls.name."""
    if not cls.name:
        raise ValueError(f"{cls.__name__} has no protocol name")
    PROTOCOL_REGISTRY[cls.name] = cls
    return cls


def run_coordinator_protocol(servers: Sequence[Union[ServerVector, np.ndarray]],
                             protocol: CoordinatorProtocol,
                             seed: int) -> Tuple[Any, CommStats]:
    """
    Execute a registered protocol and account for every message.

    Args:
        servers: Server vectors, all of the same length
        protocol: Protocol instance whose class is registered
        seed: Run seed; server and coordinator generators derive from it

    Returns:
        (protocol output, CommStats)

    Raises:
        UnknownProtocolError: If the protocol is not registered
        RoundBudgetError: If the protocol needs more rounds than it declared
    """
    if PROTOCOL_REGISTRY.get(protocol.name) is not type(protocol):
        raise UnknownProtocolError(f"Protocol {protocol.name!r} is not registered")

    vectors = as_server_vectors(servers, equal_length=not protocol.ragged_inputs)
    stats = CommStats()
    inboxes: Dict[int, List[Any]] = {v.owner: [] for v in vectors}

    round_no = 1
    while True:
        if round_no > protocol.round_budget:
            raise RoundBudgetError(
                f"Protocol {protocol.name!r} exceeded its budget of {protocol.round_budget} rounds"
            )

        replies: Dict[int, Message] = {}
        for vector in vectors:
            view = ServerView(
                owner=vector.owner,
                entries=vector.entries,
                seed=seed,
                round_no=round_no,
                inbox=tuple(inboxes[vector.owner]),
            )
            reply = protocol.server_step(view)
            stats.charge(server_entity(vector.owner), round_no, reply.words)
            replies[vector.owner] = reply
        stats.rounds_used = round_no
        logger.debug(f"{protocol.name}: round {round_no} server words {stats.words_in_round(round_no)}")

        outcome = protocol.coordinator_step(round_no, replies, numpy_rng(seed, "coordinator", round_no))
        if isinstance(outcome, Done):
            return outcome.output, stats

        round_no += 1
        for owner, message in outcome.messages.items():
            stats.charge(COORDINATOR, round_no, message.words)
            inboxes[owner].append(message.payload)


@register_protocol
class EchoProtocol(CoordinatorProtocol):
    """Every server sends one word; the coordinator returns them in server order."""
    name = "echo"
    round_budget = 1

    def server_step(self, view: ServerView) -> Message:
        value = float(view.entries[0]) if view.entries.size else 0.0
        return Message(payload=value, words=scalar_words(1))

    def coordinator_step(self, round_no, replies, rng):
        return Done([replies[owner].payload for owner in sorted(replies)])
