"""
l_p sensitivities of matrix rows.

The sensitivity of a vector a with respect to a matrix M is

    tau = max_x |<a, x>|^p / ||M x||_p^p

which equals 1 / min { ||M x||_p^p : <a, x> = 1 }. Writing M = U S V^T
(thin SVD, rank r) and y = S V^T x turns the constraint into <w, y> = 1
with w = S^-1 V^T a and the objective into ||U y||_p^p, a convex problem in
r variables. For p = 2 the minimum is 1 / ||w||^2 and tau is the leverage
score. For p = 1 it is a linear program; other p use a smooth solver on
the affine constraint set.
"""

import logging
from typing import Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog, minimize

from utils.errors import UndefinedSensitivityError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4


def rowspace(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD truncated to numerical rank: (U_r, s_r, V_r)."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0], s[:0], Vt[:0].T
    cutoff = s[0] * max(M.shape) * np.finfo(float).eps
    r = int(np.sum(s > cutoff))
    return U[:, :r], s[:r], Vt[:r].T


def leverage_scores(A: np.ndarray) -> np.ndarray:
    """
    Leverage scores a_i^T (A^T A)^+ a_i of every row.

    Raises:
        UndefinedSensitivityError: If A has no nonzero entry
    """
    A = np.asarray(A, dtype=float)
    U, _, _ = rowspace(A)
    if U.shape[1] == 0:
        raise UndefinedSensitivityError("Sensitivities are undefined for a zero matrix")
    return np.sum(U ** 2, axis=1)


def _l1_minimum(U: np.ndarray, w: np.ndarray) -> float:
    """min ||U y||_1 subject to <w, y> = 1, as a linear program over (y, t)."""
    n, r = U.shape
    c = np.concatenate([np.zeros(r), np.ones(n)])
    I = np.identity(n)
    A_ub = np.concatenate([
        np.concatenate([U, -I], 1),
        np.concatenate([-U, -I], 1),
    ], 0)
    b_ub = np.zeros(2 * n)
    A_eq = np.concatenate([w, np.zeros(n)])[None, :]
    bounds = [(None, None)] * r + [(0, None)] * n
    result = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if not result.success:
        raise RuntimeError(f"l1 sensitivity program failed: {result.message}")
    return float(result.fun)


def _lp_minimum(U: np.ndarray, w: np.ndarray, p: float, tol: float) -> float:
    """min ||U y||_p^p subject to <w, y> = 1 for p > 1."""
    y0 = w / np.dot(w, w)
    Z = null_space(w[None, :])
    if Z.shape[1] == 0:
        return float(np.sum(np.abs(U @ y0) ** p))
    base = U @ y0
    UZ = U @ Z

    def objective(z):
        v = base + UZ @ z
        av = np.abs(v)
        return float(np.sum(av ** p)), p * (UZ.T @ (np.sign(v) * av ** (p - 1)))

    result = minimize(objective, np.zeros(Z.shape[1]), jac=True, method="L-BFGS-B",
                      options={"ftol": tol * 1e-4, "gtol": tol * 1e-4, "maxiter": 2000})
    if not result.success:
        logger.debug(f"l_p sensitivity solver stopped early: {result.message}")
    return float(result.fun)


def sensitivities_against(M: np.ndarray, vals: np.ndarray, p: float = 2.0,
                          tol: float = DEFAULT_TOLERANCE) -> np.ndarray:
    """
    Sensitivity of each row of vals with respect to the rows of M.

    Rows outside the row space of M get +inf; zero rows get 0.

    Args:
        M: Reference matrix (m, d)
        vals: Query rows (k, d)
        p: Norm order, p >= 1
        tol: Relative tolerance of the iterative solver (p not 1 or 2)

    Returns:
        Array of k sensitivities
    """
    if p < 1:
        raise ValueError(f"Norm order must be >= 1, got {p}")
    M = np.asarray(M, dtype=float)
    vals = np.atleast_2d(np.asarray(vals, dtype=float))
    out = np.zeros(vals.shape[0])
    if vals.shape[0] == 0:
        return out

    U, s, V = rowspace(M)
    coeffs = vals @ V
    residual = np.linalg.norm(vals - coeffs @ V.T, axis=1)
    scale = np.linalg.norm(vals, axis=1)
    outside = residual > 1e-8 * scale
    W = coeffs / s if s.size else coeffs
    nonzero = (scale > 0) & ~outside
    out[outside & (scale > 0)] = np.inf

    if p == 2:
        out[nonzero] = np.sum(W[nonzero] ** 2, axis=1)
    else:
        for i in np.flatnonzero(nonzero):
            minimum = _l1_minimum(U, W[i]) if p == 1 else _lp_minimum(U, W[i], p, tol)
            out[i] = 1.0 / minimum if minimum > 0 else np.inf
    return out


def lp_sensitivities(A: np.ndarray, p: float = 2.0, tol: float = DEFAULT_TOLERANCE) -> np.ndarray:
    """
    l_p sensitivity of every row of A with respect to A itself.

    Raises:
        UndefinedSensitivityError: If A has no nonzero entry
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0 or not np.any(A):
        raise UndefinedSensitivityError("Sensitivities are undefined for a zero matrix")
    if p == 2:
        return np.minimum(leverage_scores(A), 1.0)
    return np.clip(sensitivities_against(A, A, p, tol), 0.0, 1.0)


def lp_sensitivity(A: np.ndarray, i: int, p: float = 2.0, tol: float = DEFAULT_TOLERANCE) -> float:
    """max_x |<a_i, x>|^p / ||A x||_p^p for row i of A, a value in [0, 1]."""
    A = np.asarray(A, dtype=float)
    if A.size == 0 or not np.any(A):
        raise UndefinedSensitivityError("Sensitivities are undefined for a zero matrix")
    value = sensitivities_against(A, A[i:i + 1], p, tol)[0]
    return float(min(max(value, 0.0), 1.0))
