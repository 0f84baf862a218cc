"""
Composable l_p sensitivity sketches: create, solve, merge and serialize.

A sketch with budget t holds t independent samples of a dataset. Sample i
keeps every row whose hash h_i(key) falls below its sampling probability

    p_key = sketch_const * tau_key * L / eps^2

where tau_key over-estimates the row's sensitivity and L is the
oversampling factor of the norm order. Because the filter is a shared hash,
samples of overlapping datasets agree on shared keys and merging never
double counts a row. Each merge spends one sample to re-estimate
sensitivities on the union, so a sketch created with budget t survives t - 1
merges.
"""

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from protocols.randomness import KeyHash
from sketches.dataset import Dataset
from sketches.sensitivity import DEFAULT_TOLERANCE, sensitivities_against
from utils.errors import ConformingViolationError, MergeBudgetError, MergeFailure, SketchMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"LPSK"
HEADER = struct.Struct("<4sIIddddQdd")
SAMPLE_HEADER = struct.Struct("<II")
KEY_HEADER = struct.Struct("<cI")
HEADER_WORDS = 8    # d, t, eps, delta, p, gamma, salt, sketch_const


@dataclass(frozen=True)
class SketchParams:
    """Construction parameters shared by every sketch that may be merged."""
    eps: float
    delta: float
    p: float = 2.0
    salt: int = 0
    sketch_const: float = 1.0     # C in p_key = C * tau * L / eps^2
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps out of range (0, 1): {self.eps}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta out of range (0, 1): {self.delta}")
        if self.p < 1:
            raise ValueError(f"Norm order must be >= 1, got {self.p}")

    def oversampling(self, d: int) -> float:
        """log(d/eps) + log(1/delta) for p = 2, d log(d/eps) + log(1/delta) otherwise."""
        d = max(d, 1)
        head = math.log(d / self.eps)
        if self.p != 2:
            head *= d
        return head + math.log(1.0 / self.delta)

    def probability(self, tau_tilde: np.ndarray, d: int) -> np.ndarray:
        """Unclamped sampling probability for sensitivity estimates tau_tilde."""
        return self.sketch_const * np.asarray(tau_tilde, dtype=float) * self.oversampling(d) / self.eps ** 2


@dataclass(frozen=True, eq=False)
class SenSample:
    """
    Rows kept by hash function h_index, sorted by encoded key.

    probs holds min(1, p_key); every kept key satisfies h_index(key) <= p_key.
    """
    hash_index: int
    keys: Tuple[Hashable, ...]
    vals: np.ndarray
    probs: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)

    def entries(self) -> Dict[Hashable, Tuple[np.ndarray, float]]:
        return {k: (self.vals[i], float(self.probs[i])) for i, k in enumerate(self.keys)}

    def weighted_rows(self, p: float) -> np.ndarray:
        """Rows scaled by (1 / prob)^(1/p)."""
        if not len(self):
            return self.vals
        return self.vals * (1.0 / self.probs)[:, None] ** (1.0 / p)


@dataclass(eq=False)
class Sketch:
    """Sketch sk_{t, gamma}: t samples of one dataset plus the failure ledger gamma."""
    samples: List[SenSample]
    t: int
    gamma: float
    params: SketchParams
    d: int
    _bytes: Optional[bytes] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.samples) != self.t:
            raise ValueError(f"Sketch with t={self.t} holds {len(self.samples)} samples")

    @property
    def eps(self) -> float:
        return self.params.eps

    @property
    def delta(self) -> float:
        return self.params.delta

    @property
    def p(self) -> float:
        return self.params.p

    @property
    def salt(self) -> int:
        return self.params.salt

    def sample(self, hash_index: int) -> SenSample:
        return self.samples[hash_index - 1]

    def size(self) -> Tuple[int, int]:
        """
        Stored rows and message words.

        An entry costs its key, d values and its probability; each sample
        adds one count word and the parameter header adds HEADER_WORDS.
        """
        rows = sum(len(s) for s in self.samples)
        words = HEADER_WORDS + sum(1 + len(s) * (self.d + 2) for s in self.samples)
        return rows, words

    def expected_size(self, dataset: Dataset) -> List[float]:
        """sum of min(1, p_key) per sample for a freshly created sketch of dataset."""
        probs = creation_probabilities(dataset, self.t, self.params)
        return [float(np.minimum(probs, 1.0).sum())] * self.t

    def to_bytes(self) -> bytes:
        if self._bytes is None:
            self._bytes = encode_sketch(self)
        return self._bytes

    @classmethod
    def from_bytes(cls, data: bytes) -> "Sketch":
        return decode_sketch(data)


def encode_key(key: Hashable) -> bytes:
    """Type-tagged key bytes; the sort order of sketch entries."""
    if isinstance(key, (bytes, bytearray)):
        return b"b" + bytes(key)
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        return b"i" + int(key).to_bytes(16, "big", signed=True)
    return b"s" + str(key).encode("utf-8")


def decode_key(raw: bytes) -> Hashable:
    tag, body = raw[:1], raw[1:]
    if tag == b"b":
        return body
    if tag == b"i":
        return int.from_bytes(body, "big", signed=True)
    return body.decode("utf-8")


def _make_sample(hash_index: int, keys: Sequence[Hashable], vals: np.ndarray,
                 probs: np.ndarray, d: int) -> SenSample:
    order = sorted(range(len(keys)), key=lambda i: encode_key(keys[i]))
    vals = np.asarray(vals, dtype=float).reshape(-1, d)
    return SenSample(
        hash_index=hash_index,
        keys=tuple(keys[i] for i in order),
        vals=vals[order] if order else np.zeros((0, d)),
        probs=np.minimum(np.asarray(probs, dtype=float)[order], 1.0) if order else np.zeros(0),
    )


def creation_probabilities(data: Dataset, t: int, params: SketchParams) -> np.ndarray:
    """Unclamped p_key for every row of data with tau_tilde = (1 + eps)^t tau."""
    if not len(data) or not np.any(data.values):
        return np.zeros(len(data))
    tau = data.sensitivities(params.p, params.tolerance)
    return params.probability((1.0 + params.eps) ** t * tau, data.d)


def create_sketch(data: Dataset, t: int, params: SketchParams) -> Sketch:
    """
    Sample a dataset t times with exactly computed sensitivities.

    Args:
        data: Keyed rows
        t: Merge budget, at least 1
        params: Shared construction parameters (eps, delta, p, salt)

    Returns:
        Sketch with gamma = 0
    """
    if t < 1:
        raise MergeBudgetError(f"Sketch budget t must be >= 1, got {t}")
    if len(data) and not np.any(data.values):
        logger.warning("Sketching a dataset whose rows are all zero; samples will be empty")

    keys = data.keys
    vals = data.values
    probs = creation_probabilities(data, t, params)
    samples = []
    for i in range(1, t + 1):
        keep = KeyHash(params.salt, i).many(keys) <= probs if keys else np.zeros(0, dtype=bool)
        idx = np.flatnonzero(keep)
        samples.append(_make_sample(i, [keys[j] for j in idx], vals[idx], probs[idx], data.d))

    sketch = Sketch(samples=samples, t=t, gamma=0.0, params=params, d=data.d)
    logger.debug(f"Created sketch t={t} over {len(data)} rows: {sketch.size()[0]} sampled")
    return sketch


def solve_embedding(sk: Sketch) -> np.ndarray:
    """
    Weighted rows of the first sample: an l_p subspace embedding of the dataset.

    Returns:
        Matrix whose rows are (1 / p_key)^(1/p) * val
    """
    sample = sk.samples[0]
    if not len(sample):
        logger.warning("Solving an empty sketch; the embedding is the zero matrix")
        return np.zeros((0, sk.d))
    return sample.weighted_rows(sk.p)


def _check_compatible(sks: Sequence[Sketch]):
    if not sks:
        raise ValueError("No sketches to combine")
    first = sks[0]
    for sk in sks[1:]:
        if sk.params != first.params:
            raise SketchMismatchError(f"Sketch parameters differ: {sk.params} vs {first.params}")
        if sk.d != first.d:
            raise SketchMismatchError(f"Sketch dimensions differ: {sk.d} vs {first.d}")


def _union_samples(samples: Iterable[SenSample], d: int) -> Tuple[List[Hashable], np.ndarray, np.ndarray]:
    """Union of samples over keys, keeping the largest stored probability."""
    vals: Dict[Hashable, np.ndarray] = {}
    probs: Dict[Hashable, float] = {}
    for sample in samples:
        for i, key in enumerate(sample.keys):
            val = sample.vals[i]
            if key in vals:
                if not np.array_equal(vals[key], val):
                    raise ConformingViolationError(key)
                probs[key] = max(probs[key], float(sample.probs[i]))
            else:
                vals[key] = val
                probs[key] = float(sample.probs[i])
    keys = list(vals)
    matrix = np.array([vals[k] for k in keys], dtype=float).reshape(-1, d)
    return keys, matrix, np.array([probs[k] for k in keys], dtype=float)


def merge_sketches(sks: Sequence[Sketch]) -> Sketch:
    """
    Merge sketches of conforming datasets into a sketch of their union.

    The reserved sample at hash index t = min t_i gives an embedding M of the
    union; every candidate of samples 1..t-1 gets its probability recomputed
    from its sensitivity against M and is kept iff its hash still falls
    below it.

    Returns:
        Sketch with budget t - 1 and gamma = delta + sum of input gammas

    Raises:
        SketchMismatchError: If parameters, salts or dimensions differ
        MergeBudgetError: If some input has t = 1
        ConformingViolationError: If a key carries two different rows
        MergeFailure: If a recomputed probability exceeds the stored one
    """
    _check_compatible(sks)
    params, d = sks[0].params, sks[0].d
    t = min(sk.t for sk in sks)
    if t < 2:
        raise MergeBudgetError(f"Cannot merge a sketch with t={t}; merging needs t >= 2")

    _, M_vals, M_probs = _union_samples((sk.sample(t) for sk in sks), d)
    M = M_vals * (1.0 / M_probs)[:, None] ** (1.0 / params.p) if len(M_probs) else M_vals
    growth = (1.0 + params.eps) ** (t - 1) * (1.0 + params.eps / 4)

    samples = []
    for i in range(1, t):
        keys, vals, stored = _union_samples((sk.sample(i) for sk in sks), d)
        if not keys:
            samples.append(_make_sample(i, [], vals, stored, d))
            continue
        tau = sensitivities_against(M, vals, params.p, params.tolerance)
        new_probs = params.probability(growth * tau, d)
        clamped = np.minimum(new_probs, 1.0)
        over = np.flatnonzero(clamped > stored * (1 + 1e-12))
        if over.size:
            j = over[0]
            raise MergeFailure(keys[j], i, float(clamped[j]), float(stored[j]))
        keep = np.flatnonzero(KeyHash(params.salt, i).many(keys) <= new_probs)
        samples.append(_make_sample(i, [keys[j] for j in keep], vals[keep], new_probs[keep], d))

    gamma = min(1.0, params.delta + sum(sk.gamma for sk in sks))
    merged = Sketch(samples=samples, t=t - 1, gamma=gamma, params=params, d=d)
    logger.debug(f"Merged {len(sks)} sketches into t={t - 1}, gamma={gamma:.3g}, {merged.size()[0]} rows")
    return merged


def union_for_solve(sks: Sequence[Sketch]) -> Sketch:
    """
    Union of the first samples of several sketches, without re-estimation.

    Each key keeps its largest stored probability. No hash level is spent;
    the result has t = 1 and is only good for solve_embedding.
    """
    _check_compatible(sks)
    params, d = sks[0].params, sks[0].d
    keys, vals, probs = _union_samples((sk.sample(1) for sk in sks), d)
    gamma = min(1.0, params.delta + sum(sk.gamma for sk in sks))
    return Sketch(samples=[_make_sample(1, keys, vals, probs, d)], t=1, gamma=gamma, params=params, d=d)


def with_salt(params: SketchParams, salt: int) -> SketchParams:
    return replace(params, salt=salt)


def encode_sketch(sk: Sketch) -> bytes:
    """Length-prefixed little-endian encoding; equal sketches give equal bytes."""
    pr = sk.params
    parts = [HEADER.pack(MAGIC, sk.d, sk.t, pr.eps, pr.delta, pr.p, sk.gamma, pr.salt,
                         pr.sketch_const, pr.tolerance)]
    for sample in sk.samples:
        parts.append(SAMPLE_HEADER.pack(sample.hash_index, len(sample)))
        for i, key in enumerate(sample.keys):
            raw = encode_key(key)
            parts.append(KEY_HEADER.pack(raw[:1], len(raw) - 1))
            parts.append(raw[1:])
            parts.append(np.asarray(sample.vals[i], dtype="<f8").tobytes())
            parts.append(struct.pack("<d", sample.probs[i]))
    return b"".join(parts)


def decode_sketch(data: bytes) -> Sketch:
    """
    Inverse of encode_sketch.

    Raises:
        ValueError: On a bad magic number or truncated input
    """
    if len(data) < HEADER.size:
        raise ValueError("Truncated sketch header")
    magic, d, t, eps, delta, p, gamma, salt, const, tol = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"Not a sketch: magic {magic!r}")
    params = SketchParams(eps=eps, delta=delta, p=p, salt=salt, sketch_const=const, tolerance=tol)
    offset = HEADER.size
    row_bytes = 8 * d
    samples = []
    try:
        for _ in range(t):
            hash_index, count = SAMPLE_HEADER.unpack_from(data, offset)
            offset += SAMPLE_HEADER.size
            keys, vals, probs = [], [], []
            for _ in range(count):
                tag, length = KEY_HEADER.unpack_from(data, offset)
                offset += KEY_HEADER.size
                keys.append(decode_key(tag + data[offset:offset + length]))
                offset += length
                vals.append(np.frombuffer(data[offset:offset + row_bytes], dtype="<f8"))
                offset += row_bytes
                probs.append(struct.unpack_from("<d", data, offset)[0])
                offset += 8
            samples.append(SenSample(
                hash_index=hash_index, keys=tuple(keys),
                vals=np.array(vals, dtype=float).reshape(-1, d), probs=np.array(probs, dtype=float),
            ))
    except struct.error as exc:
        raise ValueError(f"Truncated sketch body: {exc}") from exc
    if offset != len(data):
        raise ValueError(f"{len(data) - offset} trailing bytes after sketch")
    return Sketch(samples=samples, t=t, gamma=gamma, params=params, d=d, _bytes=bytes(data))
