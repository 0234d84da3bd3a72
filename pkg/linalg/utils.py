"""
Sparse assembly helpers and the preconditioned conjugate gradient solver.

Matrices are scipy.sparse CSR with sorted, duplicate-free column indices.
cg_solve handles several right-hand sides at once (one column per conserved
component); each column runs its own CG recursion and stops independently.
"""

import logging

import numpy as np
from django.conf import settings
from scipy import sparse

logger = logging.getLogger(__name__)


class LinearSolverError(Exception):
    """Base exception for linear solver failures"""
    pass


class ConvergenceError(LinearSolverError):
    """Raised when CG does not reach the tolerance within max_iter"""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class BreakdownError(LinearSolverError):
    """Raised when a search direction has non-positive curvature"""
    pass


def assemble_csr(rows, cols, values, shape):
    """COO triplets -> CSR, summing duplicates, indices sorted per row."""
    matrix = sparse.coo_matrix(
        (np.asarray(values, dtype=float).ravel(), (np.asarray(rows).ravel(), np.asarray(cols).ravel())),
        shape=shape,
    ).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def cg_solve(A, b, precond=None, rel_tol=None, max_iter=None, x0=None, project_mean=False, callback=None):
    """
    Jacobi-preconditioned conjugate gradients.

    Stops when sqrt(r.P^{-1}r) <= rel_tol * sqrt(b.P^{-1}b) column by column.

    Args:
        A: symmetric positive (semi-)definite sparse matrix
        b: right-hand side, shape (n,) or (n, ncols)
        precond: diagonal of the preconditioner P (None for identity)
        rel_tol: relative tolerance (default settings.SOLVER_MASS_RTOL)
        max_iter: iteration cap (default settings.SOLVER_CG_MAX_ITER)
        x0: initial guess
        project_mean: project b and the iterates onto mean-zero vectors (singular Neumann/periodic systems)
        callback: called as callback(iteration, residual_norms, iterate) after every iteration

    Returns:
        np.ndarray: solution with the shape of b

    Raises:
        ConvergenceError: If max_iter is reached, with the final residual
        BreakdownError: If A is found indefinite along a search direction
    """
    if rel_tol is None:
        rel_tol = settings.SOLVER_MASS_RTOL
    if max_iter is None:
        max_iter = settings.SOLVER_CG_MAX_ITER

    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    B = b.reshape(n, -1).copy()
    inv_diag = np.ones((n, 1)) if precond is None else (1.0 / np.asarray(precond, dtype=float)).reshape(n, 1)
    if project_mean:
        B -= B.mean(axis=0)

    X = np.zeros_like(B) if x0 is None else np.asarray(x0, dtype=float).reshape(n, -1).copy()
    R = B - A @ X
    if project_mean:
        R -= R.mean(axis=0)
    Z = inv_diag * R
    P = Z.copy()
    rz = np.sum(R * Z, axis=0)
    target = rel_tol * np.sqrt(np.sum(B * inv_diag * B, axis=0))
    active = np.sqrt(np.maximum(rz, 0.0)) > target

    iterations = 0
    while np.any(active):
        if iterations >= max_iter:
            residual = float(np.sqrt(np.maximum(rz, 0.0)).max())
            raise ConvergenceError(
                f"CG did not converge in {max_iter} iterations (residual {residual:.3e}, target {target.max():.3e})",
                iterations=iterations,
                residual=residual,
            )
        AP = A @ P
        pAp = np.sum(P * AP, axis=0)
        if np.any(active & (pAp <= 0.0)):
            raise BreakdownError(f"CG breakdown at iteration {iterations}: non-positive curvature {pAp.min():.3e}")
        alpha = np.where(active, rz / np.where(active, pAp, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        if project_mean:
            X -= X.mean(axis=0)
            R -= R.mean(axis=0)
        Z = inv_diag * R
        rz_new = np.sum(R * Z, axis=0)
        iterations += 1
        norms = np.sqrt(np.maximum(rz_new, 0.0))
        if callback is not None:
            callback(iterations, norms, X.reshape(b.shape).copy())
        beta = np.where(active, rz_new / np.where(rz > 0.0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
        active &= norms > target

    logger.debug(f"CG converged in {iterations} iterations ({B.shape[1]} right-hand sides)")
    return X.reshape(b.shape)
