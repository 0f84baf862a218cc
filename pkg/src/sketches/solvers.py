"""
Solvers built on sketch embeddings: l_p regression and low-rank approximation.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import null_space, orth
from scipy.optimize import linprog, minimize

from sketches.dataset import Dataset
from sketches.sensitivity import rowspace
from sketches.sketch import Sketch, SketchParams, create_sketch, solve_embedding
from utils.seeds import derive_seed, numpy_rng

logger = logging.getLogger(__name__)


@dataclass
class RegressionResult:
    """Coefficients of min ||X b - y||_p and whether X was rank deficient."""
    coef: np.ndarray
    rank_deficient: bool = False
    rows_used: int = 0


@dataclass
class LRAResult:
    """Orthonormal d x k basis of the approximating row space."""
    basis: np.ndarray
    sketch_rows: int     # sampled rows of A R used by the solve
    sign_dim: int        # columns m of the sign matrix R


def _split(matrix: np.ndarray):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise ValueError("Regression needs at least one feature column and a label column")
    return matrix[:, :-1], matrix[:, -1]


def least_l1(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """argmin_b ||X b - y||_1 as a linear program."""
    n, m = X.shape
    c = np.concatenate([np.zeros(m), np.ones(n)])
    I = np.identity(n)
    A_ub = np.concatenate([
        np.concatenate([-X, -I], 1),
        np.concatenate([+X, -I], 1),
    ], 0)
    b_ub = np.concatenate([-y, +y])
    result = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(None, None), method="highs")
    if not result.success:
        raise RuntimeError(f"l1 regression program failed: {result.message}")
    return result.x[:m]


def least_lp(X: np.ndarray, y: np.ndarray, p: float) -> np.ndarray:
    """argmin_b ||X b - y||_p^p for p > 1, started from least squares."""
    start = np.linalg.lstsq(X, y, rcond=None)[0]
    if p == 2:
        return start
    scale = max(float(np.sum(np.abs(X @ start - y) ** p)), 1e-300)

    def objective(b):
        r = X @ b - y
        ar = np.abs(r)
        return float(np.sum(ar ** p)) / scale, p * (X.T @ (np.sign(r) * ar ** (p - 1))) / scale

    result = minimize(objective, start, jac=True, method="L-BFGS-B",
                      options={"ftol": 1e-12, "gtol": 1e-10, "maxiter": 5000})
    return result.x


def regression_cost(matrix: np.ndarray, coef: np.ndarray, p: float = 2.0) -> float:
    """||X b - y||_p^p with the label in the last column of matrix."""
    X, y = _split(matrix)
    return float(np.sum(np.abs(X @ coef - y) ** p))


def _solve(matrix: np.ndarray, p: float) -> RegressionResult:
    X, y = _split(matrix)
    if X.shape[0] == 0:
        logger.warning("Regression on an empty embedding; returning zero coefficients")
        return RegressionResult(coef=np.zeros(X.shape[1]), rank_deficient=True)
    rank = np.linalg.matrix_rank(X)
    deficient = rank < X.shape[1]
    if deficient:
        logger.warning(f"Feature block has rank {rank} < {X.shape[1]}; coefficients are not unique")
    coef = least_l1(X, y) if p == 1 else least_lp(X, y, p)
    return RegressionResult(coef=coef, rank_deficient=bool(deficient), rows_used=X.shape[0])


def solve_regression(sk: Sketch) -> RegressionResult:
    """
    l_p regression on a sketch of feature|label rows.

    Args:
        sk: Sketch whose rows end with the label column

    Returns:
        RegressionResult minimizing ||M [b; -1]||_p over the embedding M
    """
    return _solve(solve_embedding(sk), sk.p)


def exact_regression(data: Union[Dataset, np.ndarray], p: float = 2.0) -> RegressionResult:
    """Regression on the full data."""
    matrix = data.values if isinstance(data, Dataset) else data
    return _solve(matrix, p)


def solve_lra(data: Dataset, k: int, eps: float, delta: float, seed: int,
              sign_const: float = 1.0, sketch_const: float = 1.0) -> LRAResult:
    """
    Rank-k approximation through a sign sketch and a sensitivity sketch.

    R is a d x m matrix of +-1/sqrt(m) with m = ceil(sign_const k ln(1/delta) / eps).
    The rows of A R are sampled by an l_2 sketch carrying the original rows;
    with L the sampling weights, the best rank-k approximation of L A inside
    the column space of L A R gives the basis.

    Args:
        data: Rows of A
        k: Target rank, 1 <= k <= d
        eps: Accuracy
        delta: Failure probability
        seed: Seed for the sign matrix and hash salt

    Returns:
        LRAResult with a d x k orthonormal basis
    """
    A = data.values
    d = data.d
    if not 1 <= k <= d:
        raise ValueError(f"Rank k must be in [1, {d}], got {k}")
    m = max(k, math.ceil(sign_const * k * math.log(1.0 / delta) / eps))
    rng = numpy_rng(seed, "signs")
    R = rng.choice([-1.0, 1.0], size=(d, m)) / math.sqrt(m)

    projected = Dataset.from_rows(data.keys, A @ R)
    params = SketchParams(eps=eps, delta=delta, p=2.0, salt=derive_seed(seed, "salt"),
                          sketch_const=sketch_const)
    sample = create_sketch(projected, 1, params).samples[0]
    if not len(sample):
        logger.warning("LRA sketch sampled no rows; returning an arbitrary basis")
        return LRAResult(basis=np.eye(d)[:, :k], sketch_rows=0, sign_dim=m)

    weights = (1.0 / np.sqrt(sample.probs))[:, None]
    LA = data.df.loc[list(sample.keys)].to_numpy() * weights
    LAR = sample.vals * weights

    U = orth(LAR)
    _, _, Vt = np.linalg.svd(U.T @ LA, full_matrices=False)
    basis = Vt[:k].T
    if basis.shape[1] < k:
        basis = np.concatenate([basis, null_space(basis.T)[:, :k - basis.shape[1]]], axis=1)
    logger.info(f"LRA rank {k}: sign dimension {m}, {len(sample)} sampled rows")
    return LRAResult(basis=basis, sketch_rows=len(sample), sign_dim=m)


def lra_residual(A: np.ndarray, basis: np.ndarray) -> float:
    """||A (I - P)||_F^2 for the projection P onto span(basis)."""
    A = np.asarray(A, dtype=float)
    return float(np.sum((A - (A @ basis) @ basis.T) ** 2))


def optimal_lra_residual(A: np.ndarray, k: int) -> float:
    """Residual of the truncated SVD."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return float(np.sum(s[k:] ** 2))


def embedding_distortion(M: np.ndarray, A: np.ndarray, p: float = 2.0, directions: int = 200,
                         rng: Optional[np.random.Generator] = None) -> float:
    """
    Largest relative error of ||M x||_p^p against ||A x||_p^p.

    For p = 2 this is exact: the generalized eigenvalues of M^T M against
    A^T A on the row space of A, plus infinity if M leaves that space. For
    other p, random Gaussian directions in the row space are tested.
    """
    M = np.asarray(M, dtype=float).reshape(-1, np.shape(A)[1])
    U, s, V = rowspace(np.asarray(A, dtype=float))
    if s.size == 0:
        return 0.0 if not np.any(M) else math.inf
    if M.size and np.any(np.abs(M - (M @ V) @ V.T) > 1e-8 * max(1.0, np.abs(M).max())):
        return math.inf

    if p == 2:
        W = (M @ V) / s
        eig = np.linalg.eigvalsh(W.T @ W)
        return float(np.max(np.abs(eig - 1.0)))

    rng = rng or np.random.default_rng(0)
    X = V @ rng.standard_normal((V.shape[1], directions))
    ratio = np.sum(np.abs(M @ X) ** p, axis=0) / np.sum(np.abs(np.asarray(A) @ X) ** p, axis=0)
    return float(np.max(np.abs(ratio - 1.0)))
