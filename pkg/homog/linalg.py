"""Sparse SPD solves shared by the cell and macroscopic problems.

The reported residual is the normwise backward error

    eta = ||b - K x||_inf / (||K||_inf ||x||_inf + ||b||_inf),

which stays meaningful on fine meshes where the plain relative residual
bottoms out at rounding level.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, spsolve
from scipy.sparse.linalg import norm as sparse_norm

from homog.config.loader import setting
from homog.errors import NumericalError
from homog.log import logger

# Restarts allowed when CG's recursive residual drifts from the true one
_MAX_RESTARTS = 3


def default_tol() -> float:
    return setting("solver", "tol", 1e-10)


def iteration_cap(unknowns: int) -> int:
    return int(setting("solver", "max_iter_factor", 50)) * max(1, unknowns)


def backward_error(K: sp.spmatrix, x: np.ndarray, b: np.ndarray, k_norm: float | None = None) -> float:
    if k_norm is None:
        k_norm = float(sparse_norm(K, np.inf))
    r = float(np.max(np.abs(b - K @ x), initial=0.0))
    scale = k_norm * float(np.max(np.abs(x), initial=0.0)) + float(np.max(np.abs(b), initial=0.0))
    return r / scale if scale > 0 else r


def cg_solve(K: sp.spmatrix, b: np.ndarray, tol: float, maxiter: int | None = None,
             label: str = "system") -> tuple[np.ndarray, float]:
    """Jacobi-preconditioned CG on an SPD system.

    Iterates to a relative residual of ``tol``.  When CG stagnates at the
    rounding floor first, the iterate is accepted if its backward error is
    within ``tol``.  Returns ``(x, backward_error)``.
    """
    n = K.shape[0]
    if not np.any(b):
        return np.zeros(n), 0.0
    if maxiter is None:
        maxiter = iteration_cap(n)

    diag = K.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    M = LinearOperator((n, n), matvec=lambda v: inv_diag * v, dtype=float)
    k_norm = float(sparse_norm(K, np.inf))

    x = np.zeros(n)
    error = np.inf
    for attempt in range(_MAX_RESTARTS + 1):
        x, info = cg(K, b, x0=x, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info < 0 or not np.all(np.isfinite(x)):
            raise NumericalError(f"{label}: CG breakdown", residual=error)
        error = backward_error(K, x, b, k_norm)
        if info == 0 or error <= tol:
            break
        logger.debug("%s: restart %d, backward error %.3e (info=%d)", label, attempt + 1, error, info)
    else:
        raise NumericalError(f"{label}: CG did not reach tol {tol:g} within {maxiter} iterations",
                             residual=error)
    return x, error


def direct_limit() -> int:
    return int(setting("solver", "direct_max_unknowns", 250000))


def spd_solve(K: sp.spmatrix, b: np.ndarray, tol: float, label: str = "system") -> tuple[np.ndarray, float]:
    """Sparse LU for systems up to ``direct_limit()`` unknowns, CG beyond."""
    n = K.shape[0]
    if n > direct_limit():
        return cg_solve(K, b, tol, label=label)
    if not np.any(b):
        return np.zeros(n), 0.0
    x = np.asarray(spsolve(sp.csc_matrix(K), b), dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{label}: singular system", residual=float("inf"))
    error = backward_error(K, x, b)
    if error > tol:
        raise NumericalError(f"{label}: direct solve inaccurate", residual=error)
    return x, error
