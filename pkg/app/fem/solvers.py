"""
Sparse linear solves and the damped Newton iteration shared by the steppers.

Linear systems are solved by sparse LU (``scipy.sparse.linalg.splu``); a
singular factorization surfaces as ``SolverError``.
"""

from __future__ import annotations

import logging
from typing import Callable, List, Optional, Type

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from app.core.constants import NEWTON_MAX_HALVINGS, NEWTON_MAX_ITER, NEWTON_TOL
from app.core.exceptions import NewtonError, SolverError

logger = logging.getLogger(__name__)

Norm = Callable[[np.ndarray], float]


class Factorized:
    """LU factors of a square sparse matrix; solves A x = b and Aᵀ x = b."""

    def __init__(self, matrix: sp.spmatrix, label: str = "system"):
        self.shape = matrix.shape
        try:
            self._lu = splu(sp.csc_matrix(matrix))
        except RuntimeError as exc:
            raise SolverError(f"{label}: singular matrix ({exc})") from exc
        self.label = label

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(np.asarray(rhs, dtype=np.float64))
        if not np.all(np.isfinite(x)):
            raise SolverError(f"{self.label}: non-finite solution")
        return x

    def solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(np.asarray(rhs, dtype=np.float64), trans="T")
        if not np.all(np.isfinite(x)):
            raise SolverError(f"{self.label}: non-finite adjoint solution")
        return x


def sparse_solve(matrix: sp.spmatrix, rhs: np.ndarray, label: str = "system") -> np.ndarray:
    return Factorized(matrix, label).solve(rhs)


def weighted_norm(weights: np.ndarray) -> Norm:
    """r ↦ sqrt(Σ w_j r_j²); with w = 1/L this is the lumped dual norm."""
    w = np.asarray(weights, dtype=np.float64)
    return lambda r: float(np.sqrt(np.dot(w, r * r)))


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], sp.spmatrix],
    x0: np.ndarray,
    norm: Norm,
    scale: float = 1.0,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    max_halvings: int = NEWTON_MAX_HALVINGS,
    step: Optional[int] = None,
    label: str = "newton",
    error: Type[SolverError] = NewtonError,
) -> tuple[np.ndarray, List[float]]:
    """
    Damped Newton iteration for F(x) = 0.

    Converged when ‖F(x)‖ ≤ tol·max(1, scale). A trial step is halved until
    the residual norm decreases; running out of halvings or iterations
    raises ``error`` with the residual history.
    """
    x = np.array(x0, dtype=np.float64)
    r = residual(x)
    history = [norm(r)]
    target = tol * max(1.0, scale)
    it = 0
    while history[-1] > target:
        if it >= max_iter:
            raise error(f"{label}: no convergence in {max_iter} iterations", step, history)
        dx = sparse_solve(jacobian(x), -r, label)
        t = 1.0
        for _ in range(max_halvings + 1):
            x_t = x + t * dx
            r_t = residual(x_t)
            n_t = norm(r_t)
            if np.isfinite(n_t) and (n_t < history[-1] or n_t <= target):
                break
            t *= 0.5
        else:
            raise error(f"{label}: step halving failed", step, history + [n_t])
        x, r = x_t, r_t
        history.append(n_t)
        it += 1
    logger.debug("%s converged in %d iterations (residual %.3e)", label, it, history[-1])
    return x, history
