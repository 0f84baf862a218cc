"""
Keyed row collections with conforming-union semantics.

A Dataset is a set of (key, val) items, val a d-vector. Two datasets are
conforming when every key they share carries a bit-identical val; their
union then holds each key once.
"""

import logging
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.errors import ConformingViolationError

logger = logging.getLogger(__name__)

KEY_COLUMN = "key"


def value_columns(d: int) -> List[str]:
    return [f"v{i}" for i in range(1, d + 1)]


class Dataset:
    """
    Wrapper for keyed rows stored as a pandas DataFrame.

    Expected layout: index named "key" (unique), columns v1..vd of floats.
    Sensitivities are cached per instance and per norm order.
    """

    def __init__(self, df: pd.DataFrame):
        if KEY_COLUMN in df.columns:
            df = df.set_index(KEY_COLUMN)
        df.index.name = KEY_COLUMN
        self.df = df.astype(float)
        self._validate_schema()
        self._sensitivities: Dict[Tuple[float, float], np.ndarray] = {}

    def _validate_schema(self):
        """Validate column names and key uniqueness."""
        expected = value_columns(self.df.shape[1])
        missing = [col for col in expected if col not in self.df.columns]
        if missing:
            raise ValueError(f"Missing required columns: {missing}")
        self.df = self.df[expected]
        if not self.df.index.is_unique:
            dup = self.df.index[self.df.index.duplicated()][0]
            raise ConformingViolationError(dup)

    @classmethod
    def from_rows(cls, keys: Sequence[Hashable], rows: Union[np.ndarray, Sequence[Sequence[float]]],
                  d: Optional[int] = None) -> "Dataset":
        """Build from parallel key and row sequences."""
        matrix = np.asarray(rows, dtype=float)
        if matrix.size == 0:
            matrix = matrix.reshape(0, d or 0)
        if matrix.ndim != 2:
            raise ValueError("Rows must form a 2-D array")
        if len(keys) != matrix.shape[0]:
            raise ValueError(f"{len(keys)} keys for {matrix.shape[0]} rows")
        index = pd.Index(list(keys), name=KEY_COLUMN)
        return cls(pd.DataFrame(matrix, index=index, columns=value_columns(matrix.shape[1])))

    @classmethod
    def from_mapping(cls, rows: Mapping[Hashable, Sequence[float]], d: Optional[int] = None) -> "Dataset":
        keys = list(rows)
        return cls.from_rows(keys, [rows[k] for k in keys], d)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, prefix: str = "r") -> "Dataset":
        """Keys prefix0, prefix1, ... for the rows of a matrix."""
        matrix = np.asarray(matrix, dtype=float)
        return cls.from_rows([f"{prefix}{i}" for i in range(matrix.shape[0])], matrix)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Dataset":
        """Read a CSV with header key,v1,...,vd."""
        df = pd.read_csv(path, dtype={KEY_COLUMN: str})
        if KEY_COLUMN not in df.columns:
            raise ValueError(f"Missing required columns: ['{KEY_COLUMN}']")
        return cls(df)

    def to_csv(self, path: Union[str, Path], **kwargs):
        """Save as CSV with header key,v1,...,vd."""
        self.df.to_csv(path, index=True, float_format="%.17g", **kwargs)

    @property
    def d(self) -> int:
        return self.df.shape[1]

    @property
    def keys(self) -> List[Hashable]:
        return list(self.df.index)

    @property
    def values(self) -> np.ndarray:
        return self.df.to_numpy()

    def __len__(self) -> int:
        return len(self.df)

    def __contains__(self, key) -> bool:
        return key in self.df.index

    def row(self, key: Hashable) -> np.ndarray:
        return self.df.loc[key].to_numpy()

    def union(self, *others: "Dataset") -> "Dataset":
        """
        Conforming union: shared keys must carry identical rows.

        Raises:
            ConformingViolationError: If a shared key has different rows
        """
        return union_all([self, *others])

    def sensitivities(self, p: float = 2.0, tol: float = 1e-4) -> np.ndarray:
        """l_p sensitivities of the rows, in key order; cached."""
        from sketches.sensitivity import lp_sensitivities

        if (p, tol) not in self._sensitivities:
            self._sensitivities[(p, tol)] = lp_sensitivities(self.values, p, tol)
        return self._sensitivities[(p, tol)]

    def __repr__(self) -> str:
        return f"Dataset(rows={len(self)}, d={self.d})"


def union_all(datasets: Iterable[Dataset]) -> Dataset:
    """
    Conforming union of several datasets, keys in first-appearance order.

    Raises:
        ConformingViolationError: If a shared key has different rows
        ValueError: If the datasets have different column counts
    """
    datasets = [ds for ds in datasets if ds is not None]
    if not datasets:
        raise ValueError("Union of no datasets")
    dims = {ds.d for ds in datasets if len(ds)}
    if len(dims) > 1:
        raise ValueError(f"Datasets have different column counts: {sorted(dims)}")

    frames = [ds.df for ds in datasets if len(ds)]
    if not frames:
        return datasets[0]
    stacked = pd.concat(frames)
    dup = stacked.index.duplicated(keep=False)
    if dup.any():
        shared = stacked[dup]
        conflicts = shared.groupby(level=0).nunique(dropna=False).max(axis=1) > 1
        if conflicts.any():
            raise ConformingViolationError(conflicts[conflicts].index[0])
    return Dataset(stacked[~stacked.index.duplicated(keep="first")].copy())
