"""Small statistics helpers used by the experiment runner and the tests."""

from typing import Callable, Iterable, Optional, Union

import numpy as np
from scipy import stats


def relative_error(estimate: float, truth: float) -> float:
    """
    Relative error |estimate - truth| / |truth|.

    Returns the absolute error when truth is zero.
    """
    if truth == 0:
        return abs(estimate)
    return abs(estimate - truth) / abs(truth)


def success_fraction(errors: Iterable[float], tolerance: float) -> float:
    """Fraction of relative errors that are within tolerance."""
    values = np.asarray(list(errors), dtype=float)
    if values.size == 0:
        return 0.0
    return float(np.mean(values <= tolerance))


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """
    Total-variation distance between two distributions on the same support.

    Both inputs are normalised before comparison.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"Shape mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def empirical_distribution(samples: Iterable[int], support: int) -> np.ndarray:
    """Normalised histogram of integer samples over range(support)."""
    counts = np.bincount(np.asarray(list(samples), dtype=np.int64), minlength=support)
    total = counts.sum()
    return counts / total if total else counts.astype(float)


def growth_ratios(values: Iterable[float]) -> Optional[np.ndarray]:
    """Successive ratios values[i+1] / values[i]; None for fewer than two values."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size < 2:
        return None
    return arr[1:] / arr[:-1]


def ks_distance(samples: Iterable[float], cdf: Union[str, Callable]) -> float:
    """Kolmogorov-Smirnov distance of samples from a reference CDF (scipy name or callable)."""
    return float(stats.kstest(np.asarray(list(samples), dtype=float), cdf).statistic)


def ks_two_sample(a: Iterable[float], b: Iterable[float]) -> float:
    """Kolmogorov-Smirnov distance between two empirical distributions."""
    return float(stats.ks_2samp(np.asarray(list(a), dtype=float), np.asarray(list(b), dtype=float)).statistic)
