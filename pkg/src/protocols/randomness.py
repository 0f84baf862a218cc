"""
Shared randomness for the coordinator-model protocols.

Every party reconstructs the same objects from a shared seed, so none of
them is ever charged as communication:

- ExpStream: discretized standard exponential variates with random access
  by index, backed either by a counter-mode SplitMix64 mixer or by a Nisan
  generator over pairwise independent hash functions.
- KeyHash / uniform_hash: keyed hashes of byte-string keys into [0, 1).
- audit_exponentials: a one-pass check of the laws the protocols rely on.
"""

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from utils.seeds import MASK64, expand_seed

logger = logging.getLogger(__name__)

# SplitMix64 constants
GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_MULT_1 = np.uint64(0xBF58476D1CE4E5B9)
MIX_MULT_2 = np.uint64(0x94D049BB133111EB)

MERSENNE_61 = (1 << 61) - 1
NISAN_BLOCK_BITS = 61
MIN_PRECISION_BITS = 32
# float64 conversion keeps at most this many bits so that u stays inside (0, 1)
FLOAT_BITS = 52

KeyLike = Union[bytes, str, int]


class Backend(Enum):
    """Source of the uniform bits behind an ExpStream."""
    FULL_RANDOM = "full-random"    # counter-mode SplitMix64
    NISAN_PRG = "nisan-prg"        # Nisan generator, O(b^2)-bit seed


def splitmix64(values: np.ndarray) -> np.ndarray:
    """
    Apply the SplitMix64 finaliser elementwise to a uint64 array.

    Args:
        values: Array of uint64 states

    Returns:
        Mixed uint64 array of the same shape
    """
    z = np.asarray(values, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= MIX_MULT_1
        z ^= z >> np.uint64(27)
        z *= MIX_MULT_2
        z ^= z >> np.uint64(31)
    return z


def counter_bits(seed: int, indices: np.ndarray) -> np.ndarray:
    """64 pseudorandom bits per index, a pure function of (seed, index)."""
    base = splitmix64(np.array([seed & MASK64], dtype=np.uint64))[0]
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = base + (idx + np.uint64(1)) * GOLDEN_GAMMA
    return splitmix64(states)


class NisanGenerator:
    """
    Nisan's generator with random access to its output blocks.

    The seed holds a start block x and one hash h_j(y) = (a_j y + c_j) mod P
    per level, P = 2^61 - 1. Level L doubles the output:
    G_L(x) = G_{L-1}(x) followed by G_{L-1}(h_L(x)), so block i is obtained
    from x by applying h_j for every set bit j-1 of i, highest level first.
    """

    def __init__(self, seed: bytes, num_blocks: int):
        if num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {num_blocks}")
        self.num_blocks = num_blocks
        self.levels = max(1, (num_blocks - 1).bit_length())

        required = self.required_seed_bytes(num_blocks)
        if len(seed) < required:
            raise ValueError(
                f"Seed of {len(seed)} bytes is too short for {num_blocks} blocks "
                f"(need {required})"
            )

        self._start = int.from_bytes(seed[0:8], "little") % MERSENNE_61
        self._hashes = []
        for level in range(self.levels):
            offset = 8 + 16 * level
            a = int.from_bytes(seed[offset:offset + 8], "little") % (MERSENNE_61 - 1) + 1
            c = int.from_bytes(seed[offset + 8:offset + 16], "little") % MERSENNE_61
            self._hashes.append((a, c))

    @staticmethod
    def required_seed_bytes(num_blocks: int) -> int:
        """Seed length for a stream of num_blocks blocks: 8 + 16 bytes per level."""
        levels = max(1, (max(num_blocks, 1) - 1).bit_length())
        return 8 + 16 * levels

    def _apply(self, level: int, y: int) -> int:
        a, c = self._hashes[level - 1]
        return (a * y + c) % MERSENNE_61

    def _check_index(self, index: int):
        if index < 0 or index >= self.num_blocks:
            raise ValueError(
                f"Block index {index} outside the declared stream of {self.num_blocks} blocks"
            )

    def block(self, index: int) -> int:
        """Return block `index` as a 61-bit integer."""
        self._check_index(index)
        y = self._start
        for level in range(self.levels, 0, -1):
            if (index >> (level - 1)) & 1:
                y = self._apply(level, y)
        return y

    def blocks(self, start: int, stop: int) -> List[int]:
        """Return blocks start..stop-1 in order, one hash evaluation per block."""
        if start >= stop:
            return []
        self._check_index(start)
        self._check_index(stop - 1)

        out: List[int] = []

        def emit(y: int, level: int, base: int):
            span = 1 << level
            if base >= stop or base + span <= start:
                return
            if level == 0:
                out.append(y)
                return
            half = span >> 1
            emit(y, level - 1, base)
            emit(self._apply(level, y), level - 1, base + half)

        emit(self._start, self.levels, 0)
        return out


@lru_cache(maxsize=64)
def _generator(seed: bytes, num_blocks: int) -> NisanGenerator:
    return NisanGenerator(seed, num_blocks)


def nisan_prg(seed: bytes, block_index: int, block_len: int = NISAN_BLOCK_BITS,
              num_blocks: Optional[int] = None) -> int:
    """
    Random-access block of Nisan's generator.

    Args:
        seed: Raw seed bytes, at least NisanGenerator.required_seed_bytes(num_blocks)
        block_index: Which block to return
        block_len: Bits per returned block (1..61); the top bits of the 61-bit block
        num_blocks: Declared stream length (defaults to the most the seed supports)

    Returns:
        The block as a non-negative integer below 2**block_len
    """
    if not 1 <= block_len <= NISAN_BLOCK_BITS:
        raise ValueError(f"block_len must be in [1, {NISAN_BLOCK_BITS}], got {block_len}")
    if num_blocks is None:
        levels = max(1, (len(seed) - 8) // 16)
        num_blocks = 1 << levels
    value = _generator(bytes(seed), num_blocks).block(block_index)
    return value >> (NISAN_BLOCK_BITS - block_len)


def load_seed_file(path: Union[str, Path]) -> bytes:
    """Read a PRG seed stored as a raw little-endian byte blob."""
    return Path(path).read_bytes()


def save_seed_file(path: Union[str, Path], seed: bytes):
    """Write a PRG seed as a raw byte blob."""
    Path(path).write_bytes(bytes(seed))


@dataclass(frozen=True)
class ExpStream:
    """
    Seeded, discretized standard exponential variates with random access.

    Variate i is -ln(u_i) rounded down to a power of (1 + discretization_eps/4),
    where u_i is built from the top precision bits of uniform block i.
    """
    seed: int
    count: int
    precision_bits: int = 48
    discretization_eps: float = 0.01
    backend: Backend = Backend.FULL_RANDOM

    def __post_init__(self):
        if self.precision_bits < MIN_PRECISION_BITS:
            raise ValueError(
                f"precision_bits must be >= {MIN_PRECISION_BITS}, got {self.precision_bits}"
            )
        if self.backend is Backend.NISAN_PRG and self.precision_bits > NISAN_BLOCK_BITS:
            raise ValueError(f"NisanPrg blocks carry at most {NISAN_BLOCK_BITS} bits")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.discretization_eps < 0:
            raise ValueError("discretization_eps must be non-negative")

    @property
    def grid_ratio(self) -> float:
        return 1.0 + self.discretization_eps / 4.0

    @property
    def prg_seed(self) -> bytes:
        return expand_seed(self.seed, NisanGenerator.required_seed_bytes(self.count))

    def _check_range(self, indices: np.ndarray):
        if indices.size and (indices.min() < 0 or indices.max() >= self.count):
            raise IndexError(f"Variate index outside [0, {self.count})")

    def _uniform_bits(self, indices: np.ndarray) -> np.ndarray:
        bits = min(self.precision_bits, FLOAT_BITS)
        if self.backend is Backend.FULL_RANDOM:
            raw = counter_bits(self.seed, indices)
            return (raw >> np.uint64(64 - bits)).astype(np.float64)

        generator = _generator(self.prg_seed, self.count)
        flat = indices.ravel()
        if flat.size and np.all(np.diff(flat) == 1):
            values = generator.blocks(int(flat[0]), int(flat[-1]) + 1)
        else:
            values = [generator.block(int(i)) for i in flat]
        shift = NISAN_BLOCK_BITS - bits
        return np.array([v >> shift for v in values], dtype=np.float64).reshape(indices.shape)

    def _discretize(self, e: np.ndarray) -> np.ndarray:
        if self.discretization_eps == 0:
            return e
        log_g = math.log(self.grid_ratio)
        return np.exp(np.floor(np.log(e) / log_g) * log_g)

    def variates(self, indices: Union[Sequence[int], np.ndarray]) -> np.ndarray:
        """Variates at the given indices (any shape)."""
        idx = np.asarray(indices, dtype=np.int64)
        self._check_range(idx)
        bits = min(self.precision_bits, FLOAT_BITS)
        u = (self._uniform_bits(idx) + 0.5) / float(1 << bits)
        return self._discretize(-np.log(u))

    def variate(self, index: int) -> float:
        """Variate at a single index."""
        return float(self.variates(np.array([index]))[0])

    def copies(self, num_copies: int, width: int) -> np.ndarray:
        """
        Variates laid out as independent copy-sets.

        Returns:
            Array of shape (num_copies, width); row c holds indices
            c*width .. (c+1)*width - 1
        """
        return self.variates(np.arange(num_copies * width, dtype=np.int64)).reshape(num_copies, width)


def gen_exponentials(seed: int, count: int, precision_bits: int = 48,
                     discretization_eps: float = 0.01,
                     backend: Backend = Backend.FULL_RANDOM) -> ExpStream:
    """
    Build a shared exponential stream.

    Args:
        seed: Shared 64-bit seed
        count: Number of addressable variates
        precision_bits: Uniform bits per variate (>= 32)
        discretization_eps: Variates are rounded to powers of (1 + eps/4)
        backend: FULL_RANDOM or NISAN_PRG

    Returns:
        ExpStream
    """
    return ExpStream(seed=seed & MASK64, count=count, precision_bits=precision_bits,
                     discretization_eps=discretization_eps, backend=backend)


def _key_bytes(key: KeyLike) -> bytes:
    if isinstance(key, bytes):
        return key
    if isinstance(key, (int, np.integer)):
        return int(key).to_bytes(16, "little", signed=True)
    return str(key).encode("utf-8")


def uniform_hash(key: KeyLike, salt: int, index: int) -> float:
    """
    Keyed hash of a key into [0, 1) with 53 bits of resolution.

    Args:
        key: Opaque key (bytes, str or int)
        salt: Shared 64-bit salt
        index: Which hash function h_index to evaluate

    Returns:
        Float in [0, 1)
    """
    digest = hashlib.blake2b(
        _key_bytes(key), digest_size=8,
        key=struct.pack("<QQ", salt & MASK64, index & MASK64),
    ).digest()
    return (int.from_bytes(digest, "little") >> 11) / float(1 << 53)


@dataclass(frozen=True)
class KeyHash:
    """One hash function h_index of the family selected by salt."""
    salt: int
    index: int

    def __call__(self, key: KeyLike) -> float:
        return uniform_hash(key, self.salt, self.index)

    def many(self, keys: Iterable[KeyLike]) -> np.ndarray:
        return np.array([uniform_hash(k, self.salt, self.index) for k in keys], dtype=float)


@dataclass(frozen=True)
class ExpAudit:
    """Counts kept by the one-pass exponential audit."""
    copies: int
    count_less: int      # max overshoots (1 + eps) * sum / ln 2
    count_more: int      # max undershoots (1 - eps) * sum / ln 2
    count_heavy: int     # heavy-hitter event holds

    @property
    def healthy(self) -> bool:
        return (self.count_less < self.copies / 2
                and self.count_more < self.copies / 2
                and self.count_heavy == self.copies)


def audit_exponentials(stream: ExpStream, f: np.ndarray, eps: float,
                       heavy_const: float = 4.0, copies: Optional[int] = None) -> ExpAudit:
    """
    Single pass over copy-sets of a stream keeping a running sum and max.

    Args:
        stream: Stream to audit; copy c uses indices c*n .. (c+1)*n - 1
        f: Nonnegative weights, length n
        eps: Accuracy used for the over/undershoot counts
        heavy_const: C in the heavy-hitter threshold C ln^2 n
        copies: Number of copy-sets (defaults to all that fit in the stream)

    Returns:
        ExpAudit
    """
    f = np.asarray(f, dtype=float)
    n = f.size
    copies = copies or stream.count // n
    total = f.sum()
    log_n = max(math.log(n), 1.0)
    upper = (1 + eps) * total / math.log(2)
    lower = (1 - eps) * total / math.log(2)

    less = more = heavy = 0
    for c in range(copies):
        e = stream.variates(np.arange(c * n, (c + 1) * n, dtype=np.int64))
        scaled = f / e
        running_max = scaled.max()
        running_sum = scaled.sum()
        less += running_max >= upper
        more += running_max <= lower
        heavy += running_sum <= heavy_const * log_n ** 2 * running_max

    logger.debug(f"Audit over {copies} copies: less={less} more={more} heavy={heavy}")
    return ExpAudit(copies=copies, count_less=int(less), count_more=int(more), count_heavy=int(heavy))
