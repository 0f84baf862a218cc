"""
Synthetic instances and file loaders.

Server vectors are nonnegative; sketch datasets are keyed Gaussian or
uniform rows. All generators draw from numpy_rng(seed, <label>) so one seed
reproduces the instance.
"""

import logging
from pathlib import Path
from typing import Hashable, List, Sequence, Union

import numpy as np
import pandas as pd

from config.settings import Generator
from sketches.dataset import Dataset
from utils.seeds import numpy_rng

logger = logging.getLogger(__name__)

SERVER_PREFIX = "server_"


def random_servers(generator: Generator, n: int, s: int, scale: float, seed: int) -> List[np.ndarray]:
    """
    s nonnegative length-n vectors.

    random-uniform draws integers in [0, scale]; random-gaussian draws
    |N(0, scale / 3)|.
    """
    rng = numpy_rng(seed, "servers")
    if generator == Generator.RANDOM_UNIFORM:
        return [rng.integers(0, int(scale) + 1, size=n).astype(float) for _ in range(s)]
    if generator == Generator.RANDOM_GAUSSIAN:
        return [np.abs(rng.normal(0.0, scale / 3.0, size=n)) for _ in range(s)]
    raise ValueError(f"Generator {generator.value} does not synthesize vectors")


def load_servers(path: Union[str, Path]) -> List[np.ndarray]:
    """
    Read server vectors from a CSV with columns server_0, ..., server_{s-1}.

    Raises:
        ValueError: If no server columns are present or entries are negative
    """
    df = pd.read_csv(path)
    cols = sorted((c for c in df.columns if c.startswith(SERVER_PREFIX)),
                  key=lambda c: int(c[len(SERVER_PREFIX):]))
    if not cols:
        raise ValueError(f"Missing required columns: ['{SERVER_PREFIX}0', ...]")
    vectors = [df[c].to_numpy(dtype=float) for c in cols]
    if any(np.any(v < 0) for v in vectors):
        raise ValueError("Server vectors must be nonnegative")
    return vectors


def write_servers(vectors: Sequence[np.ndarray], path: Union[str, Path]):
    df = pd.DataFrame({f"{SERVER_PREFIX}{j}": v for j, v in enumerate(vectors)})
    df.to_csv(path, index=False)


def random_rows(generator: Generator, rows: int, d: int, seed: int, label: str = "rows") -> np.ndarray:
    rng = numpy_rng(seed, label)
    if generator == Generator.RANDOM_GAUSSIAN:
        return rng.standard_normal((rows, d))
    if generator == Generator.RANDOM_UNIFORM:
        return rng.uniform(-1.0, 1.0, size=(rows, d))
    raise ValueError(f"Generator {generator.value} does not synthesize rows")


def random_dataset(generator: Generator, rows: int, d: int, seed: int, prefix: str = "r") -> Dataset:
    return Dataset.from_matrix(random_rows(generator, rows, d, seed, prefix), prefix=prefix)


def split_with_overlap(data: Dataset, parts: int, overlap: float, seed: int) -> List[Dataset]:
    """
    Partition rows into parts, then let part j also hold a share overlap of
    part j+1's rows (cyclically). The pieces are conforming and their union
    is data.
    """
    rng = numpy_rng(seed, "split")
    keys = data.keys
    order = rng.permutation(len(keys))
    chunks = np.array_split(order, parts)
    pieces = []
    for j in range(parts):
        nxt = chunks[(j + 1) % parts]
        extra = nxt[: int(round(overlap * len(nxt)))] if parts > 1 else nxt[:0]
        idx = np.concatenate([chunks[j], extra]).astype(int)
        pieces.append(Dataset(data.df.iloc[np.sort(idx)].copy()))
    return pieces


def regression_dataset(rows: int, d: int, noise: float, seed: int) -> Dataset:
    """Gaussian features in d - 1 columns and a noisy linear label in the last."""
    rng = numpy_rng(seed, "regression")
    X = rng.standard_normal((rows, d - 1))
    coef = rng.standard_normal(d - 1)
    y = X @ coef + noise * rng.standard_normal(rows)
    return Dataset.from_matrix(np.column_stack([X, y]))


def low_rank_dataset(rows: int, d: int, k: int, noise: float, seed: int) -> Dataset:
    """Rank-k Gaussian signal plus noise * N(0, 1) entries."""
    rng = numpy_rng(seed, "low-rank")
    signal = rng.standard_normal((rows, k)) @ rng.standard_normal((k, d))
    return Dataset.from_matrix(signal + noise * rng.standard_normal((rows, d)))


def random_row_sets(generator: Generator, s: int, rows: int, n: int, scale: float,
                    seed: int) -> List[np.ndarray]:
    """s sets of nonnegative n-dimensional rows for correlation sums."""
    rng = numpy_rng(seed, "row-sets")
    if generator == Generator.RANDOM_UNIFORM:
        return [rng.integers(0, int(scale) + 1, size=(rows, n)).astype(float) for _ in range(s)]
    if generator == Generator.RANDOM_GAUSSIAN:
        return [np.abs(rng.normal(0.0, scale / 3.0, size=(rows, n))) for _ in range(s)]
    raise ValueError(f"Generator {generator.value} does not synthesize row sets")


def node_datasets(nodes: Sequence[Hashable], rows: int, d: int, generator: Generator, seed: int,
                  overlap: float = 0.0) -> dict:
    """
    Fresh rows for every node; with overlap > 0 each node also copies that
    share of the next node's rows, so neighbors hold conforming duplicates.
    """
    own = {u: random_dataset(generator, rows, d, seed, prefix=f"n{u}_") for u in nodes}
    if overlap <= 0 or len(nodes) < 2:
        return own
    out = {}
    for i, u in enumerate(nodes):
        nxt = own[nodes[(i + 1) % len(nodes)]]
        extra = Dataset(nxt.df.iloc[: int(round(overlap * len(nxt)))].copy())
        out[u] = own[u].union(extra)
    return out
