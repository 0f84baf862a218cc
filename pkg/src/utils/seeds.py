"""
Seed parsing and derivation utilities.

Every random object in a run is derived from one 64-bit seed so that a run
is reproducible from the seed alone. Derivation hashes the parent seed with
a list of labels (server id, round, copy, attempt, ...).
"""

import hashlib
import struct
from functools import lru_cache
from typing import Union

import numpy as np

MASK64 = (1 << 64) - 1

SeedLike = Union[int, str]


def parse_seed(value: SeedLike) -> int:
    """
    Parse a seed given as an integer, a decimal string or a 0x-hex string.

    Args:
        value: Seed value

    Returns:
        Seed as an unsigned 64-bit integer

    Raises:
        ValueError: If the value is not a number or does not fit in 64 bits
    """
    if isinstance(value, bool):
        raise ValueError(f"Invalid seed: {value!r}")

    if isinstance(value, (int, np.integer)):
        seed = int(value)
    else:
        text = str(value).strip().lower()
        if not text:
            raise ValueError("Empty seed")
        try:
            seed = int(text, 16) if text.startswith("0x") else int(text, 10)
        except ValueError:
            raise ValueError(f"Invalid seed: {value!r}")

    if seed < 0 or seed > MASK64:
        raise ValueError(f"Seed out of 64-bit range: {value!r}")
    return seed


def format_seed(seed: int) -> str:
    """Format a seed as a 0x-prefixed 16-digit hex string."""
    return f"0x{seed & MASK64:016x}"


def _label_bytes(label) -> bytes:
    if isinstance(label, (int, np.integer)):
        return b"i" + int(label).to_bytes(16, "little", signed=True)
    return b"s" + str(label).encode("utf-8")


def derive_seed(seed: int, *labels) -> int:
    """
    Derive an independent-looking child seed from a parent seed and labels.

    Args:
        seed: Parent seed
        *labels: Integers or strings identifying the child

    Returns:
        Child seed as an unsigned 64-bit integer
    """
    h = hashlib.blake2b(digest_size=8, key=struct.pack("<Q", seed & MASK64))
    for label in labels:
        part = _label_bytes(label)
        h.update(struct.pack("<I", len(part)))
        h.update(part)
    return int.from_bytes(h.digest(), "little")


@lru_cache(maxsize=256)
def expand_seed(seed: int, nbytes: int) -> bytes:
    """
    Expand a 64-bit seed into a byte string of the requested length.

    Blocks are blake2b digests of an incrementing counter keyed by the seed.
    """
    key = struct.pack("<Q", seed & MASK64)
    out = bytearray()
    counter = 0
    while len(out) < nbytes:
        out.extend(hashlib.blake2b(struct.pack("<Q", counter), digest_size=64, key=key).digest())
        counter += 1
    return bytes(out[:nbytes])


def numpy_rng(seed: int, *labels) -> np.random.Generator:
    """Return a numpy Generator seeded from (seed, labels)."""
    return np.random.default_rng(derive_seed(seed, *labels))
