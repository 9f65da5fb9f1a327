"""Sparse kernels, a dense direct solver and (flexible) right-preconditioned GMRES."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels

SparseMatrix = sp.csr_matrix

ZERO_RHS_ATOL = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    final_relative_residual: float = np.nan
    kind: str = "gmres"
    block_index: int | None = None
    block_type: str | None = None
    sweeps: int = 0

    @property
    def contraction(self) -> np.ndarray:
        h = np.asarray(self.residual_history)
        return h[1:] / h[:-1] if h.size > 1 else np.zeros(0)


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A: sp.csr_matrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return _kernels.csr_matvec(A.indptr, A.indices, A.data, x)


def dense_solve(A, b, rcond: float = 1e-14) -> np.ndarray:
    """LU with partial pivoting; raises SingularMatrixError on a tiny pivot."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"dense_solve needs a square matrix, got {A.shape}")
    if A.shape[0] == 0:
        return b.copy()
    with warnings.catch_warnings():
        # an exactly zero pivot is reported below as SingularMatrixError
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    scale = np.abs(A).max()
    if scale == 0 or pivots.min() <= rcond * scale:
        raise SingularMatrixError(f"matrix is singular to working precision (min pivot {pivots.min():.3e})")
    return sla.lu_solve((lu, piv), b)


def _identity(x):
    return x


def gmres(apply_op: Callable, apply_precond: Callable | None, b, tol: float = 1e-8, restart: int = 100,
          max_iter: int = 1000, x0=None, flexible: bool = False):
    """Right-preconditioned restarted GMRES.

    Modified Gram-Schmidt with one reorthogonalization pass. The recorded
    residual history holds the norms of ``b - A x_k`` assembled from the
    stored products ``A M^{-1} v_j``; the final entry is recomputed from
    scratch. ``flexible=True`` keeps the preconditioned directions instead
    of reapplying the preconditioner, which admits nonlinear preconditioners.
    """
    if not 0 < tol < 1:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    M = apply_precond or _identity
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    target = tol * bnorm if bnorm > 0 else ZERO_RHS_ATOL

    r = b - apply_op(x) if x.any() else b.copy()
    rnorm = np.linalg.norm(r)
    history = [float(rnorm)]
    rel = lambda v: v / bnorm if bnorm > 0 else v  # noqa: E731
    if rnorm <= target:
        return x, SolverReport(True, 0, history, float(rel(rnorm)))

    iters = 0
    while iters < max_iter:
        m = min(restart, max_iter - iters)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        AZ = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm
        V[0] = r / rnorm
        Ax0 = b - r
        k_done = 0
        breakdown = False
        for k in range(m):
            z = M(V[k])
            w = apply_op(z)
            Z[k] = z
            AZ[k] = w
            w = w.copy()
            for _ in range(2):
                for i in range(k + 1):
                    h = V[i] @ w
                    H[i, k] += h
                    w -= h * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            iters += 1
            k_done = k + 1
            if H[k + 1, k] > 1e-14 * np.abs(H[: k + 1, k]).max(initial=1e-300):
                V[k + 1] = w / H[k + 1, k]
            else:
                breakdown = True
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = (1.0, 0.0) if denom == 0 else (H[k, k] / denom, H[k + 1, k] / denom)
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            y = sla.solve_triangular(H[: k + 1, : k + 1], g[: k + 1])
            res = b - Ax0 - y @ AZ[: k + 1]
            history.append(float(np.linalg.norm(res)))
            if history[-1] <= target or breakdown:
                break
        y = sla.solve_triangular(H[:k_done, :k_done], g[:k_done])
        if flexible:
            x = x + y @ Z[:k_done]
        else:
            x = x + M(y @ V[:k_done])
        r = b - apply_op(x)
        rnorm = np.linalg.norm(r)
        history[-1] = float(rnorm)
        if rnorm <= target:
            return x, SolverReport(True, iters, history, float(rel(rnorm)))
    return x, SolverReport(False, iters, history, float(rel(rnorm)))


def fgmres(apply_op, apply_precond, b, tol=1e-8, restart=100, max_iter=1000, x0=None):
    return gmres(apply_op, apply_precond, b, tol=tol, restart=restart, max_iter=max_iter, x0=x0, flexible=True)
