"""dG(r) time elements: Radau nodes, slab matrices and ordered real Schur forms.

On the reference slab (0, 1] the trial/test space is spanned by the Lagrange
polynomials at the right Gauss-Radau points. For an abstract evolution
``D x' + K x = F`` one slab of length ``tau`` reads

    sum_j (G_hat[i, j] D + tau M_hat[i, j] K) X_j = tau int F phi_i + phi_i(0+) D x_prev

where ``G_hat[i, j] = int phi_j' phi_i + phi_j(0+) phi_i(0+)`` carries the
jump (weak initial condition) and ``M_hat[i, j] = int phi_j phi_i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dtrexc

MAX_DEGREE = 10


class TimeDiscretizationError(ValueError):
    pass


class SchurConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TimePartition:
    t_points: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_points, float)
        if t.ndim != 1 or t.size < 2:
            raise TimeDiscretizationError("a partition needs at least two time points")
        if t[0] != 0.0:
            raise TimeDiscretizationError("partitions start at t_0 = 0")
        if np.any(np.diff(t) <= 0):
            raise TimeDiscretizationError("time points must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t_points", t)

    @classmethod
    def uniform(cls, T: float, n_slabs: int) -> "TimePartition":
        if n_slabs < 1 or not T > 0:
            raise TimeDiscretizationError(f"need T > 0 and n_slabs >= 1, got T={T}, n_slabs={n_slabs}")
        t = np.linspace(0.0, T, n_slabs + 1)
        t[-1] = T
        return cls(t)

    @property
    def T(self) -> float:
        return float(self.t_points[-1])

    @property
    def n_slabs(self) -> int:
        return self.t_points.size - 1

    @property
    def taus(self) -> np.ndarray:
        return np.diff(self.t_points)

    def slab(self, n: int) -> tuple[float, float]:
        """Slab ``n`` (1-based) as ``(t_{n-1}, t_n)``."""
        return float(self.t_points[n - 1]), float(self.t_points[n])


def _check_degree(r):
    if int(r) != r or not 0 <= r <= MAX_DEGREE:
        raise TimeDiscretizationError(f"time degree r must be an integer in [0, {MAX_DEGREE}], got {r}")
    return int(r)


@lru_cache(maxsize=None)
def _radau(r: int) -> tuple[float, ...]:
    # right Radau points on [-1, 1]: roots of P_{r+1} - P_r
    c = np.zeros(r + 2)
    c[r + 1], c[r] = 1.0, -1.0
    x = np.sort(np.real(np.polynomial.legendre.legroots(c)))
    # Newton polish on the Legendre difference
    dc = np.polynomial.legendre.legder(c)
    for _ in range(2):
        x = x - np.polynomial.legendre.legval(x, c) / np.polynomial.legendre.legval(x, dc)
    s = 0.5 * (x + 1.0)
    s[-1] = 1.0
    return tuple(s)


def radau_points(r: int) -> np.ndarray:
    """The r+1 right Gauss-Radau points in (0, 1], last point exactly 1."""
    return np.array(_radau(_check_degree(r)))


def lagrange_basis(nodes, s):
    """Values ``(n, len(s))`` and derivatives of the Lagrange polynomials at ``s``."""
    nodes = np.asarray(nodes, float)
    s = np.atleast_1d(np.asarray(s, float))
    n = nodes.size
    val = np.ones((n, s.size))
    der = np.zeros((n, s.size))
    for j in range(n):
        others = np.delete(nodes, j)
        denom = np.prod(nodes[j] - others)
        terms = s[None, :] - others[:, None]
        val[j] = np.prod(terms, axis=0) / denom
        for k in range(n - 1):
            der[j] += np.prod(np.delete(terms, k, axis=0), axis=0) / denom
    return val, der


@dataclass(frozen=True, eq=False)
class TimeBasis:
    r: int
    nodes: np.ndarray
    weights: np.ndarray  # int_0^1 phi_j
    G_hat: np.ndarray
    M_hat: np.ndarray
    phi_at_0: np.ndarray

    def evaluate(self, coeffs, s):
        """Evaluate the slab polynomial with nodal ``coeffs`` (r+1, ...) at reference times ``s``."""
        val, _ = lagrange_basis(self.nodes, s)
        return np.tensordot(val.T, np.asarray(coeffs), axes=1)


@lru_cache(maxsize=None)
def _time_matrices(r: int) -> TimeBasis:
    nodes = radau_points(r)
    x, w = np.polynomial.legendre.leggauss(r + 2)
    s, w = 0.5 * (x + 1.0), 0.5 * w
    val, der = lagrange_basis(nodes, s)
    M = np.einsum("q,iq,jq->ij", w, val, val)
    v0, _ = lagrange_basis(nodes, [0.0])
    v0 = v0[:, 0]
    G = np.einsum("q,iq,jq->ij", w, val, der) + np.outer(v0, v0)
    weights = val @ w
    for a in (nodes, weights, G, M, v0):
        a.setflags(write=False)
    return TimeBasis(r, nodes, weights, G, M, v0)


def time_matrices(r: int) -> TimeBasis:
    return _time_matrices(_check_degree(r))


@dataclass(frozen=True, eq=False)
class SchurForm:
    W: np.ndarray
    Q: np.ndarray
    T: np.ndarray
    lambda_diag: np.ndarray
    block_layout: tuple[tuple[int, ...], ...]

    @property
    def eigenvalues(self) -> np.ndarray:
        out = []
        for blk in self.block_layout:
            out.extend(np.linalg.eigvals(self.T[np.ix_(blk, blk)]))
        return np.array(out)

    @property
    def block_types(self) -> tuple[str, ...]:
        return tuple("1x1" if len(b) == 1 else "2x2" for b in self.block_layout)


def _blocks(T, tol=0.0):
    n = T.shape[0]
    out, i = [], 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            out.append((i, i + 1))
            i += 2
        else:
            out.append((i,))
            i += 1
    return out


def _block_key(T, blk):
    ev = np.linalg.eigvals(T[np.ix_(blk, blk)])
    return (round(float(ev[0].real), 12), round(float(abs(ev[0].imag)), 12))


def real_schur(basis: TimeBasis) -> SchurForm:
    """Real Schur form of W = M_hat^{-1} G_hat, blocks sorted by (Re, |Im|)."""
    W = np.linalg.solve(basis.M_hat, basis.G_hat)
    try:
        T, Q = sla.schur(W, output="real")
    except (np.linalg.LinAlgError, ValueError) as exc:  # LAPACK sweep budget exhausted
        raise SchurConvergenceError(f"real Schur QR iteration failed for r={basis.r}: {exc}") from exc
    T = np.array(T)
    Q = np.array(Q)
    # selection sort of diagonal blocks through LAPACK block swaps
    pos = 0
    while True:
        blocks = _blocks(T)
        start = sum(1 for b in blocks if b[0] < pos)
        rest = blocks[start:]
        if len(rest) <= 1:
            break
        keys = [_block_key(T, b) for b in rest]
        best = rest[min(range(len(rest)), key=keys.__getitem__)]
        if best[0] != pos:
            T, Q, info = dtrexc(T, Q, best[0] + 1, pos + 1)
            if info != 0:
                raise SchurConvergenceError(f"Schur block reordering failed (info={info})")
        pos += len(best)
    blocks = _blocks(T)
    # clean roundoff below the quasi-triangle
    mask = np.tril(np.ones_like(T, dtype=bool), -1)
    for b in blocks:
        if len(b) == 2:
            mask[b[1], b[0]] = False
    T[mask] = 0.0
    for b in blocks:
        if len(b) == 2:
            ev = np.linalg.eigvals(T[np.ix_(b, b)])
            if abs(ev[0].imag) == 0.0 or ev[0].real <= 0:
                raise SchurConvergenceError("2x2 Schur block without a complex pair of positive real part")
        elif T[b[0], b[0]] <= 0:
            raise SchurConvergenceError("non-positive real eigenvalue in the dG time matrix")
    for a in (W, Q, T):
        a.setflags(write=False)
    return SchurForm(W=W, Q=Q, T=T, lambda_diag=np.diag(T).copy(), block_layout=tuple(tuple(b) for b in blocks))


@lru_cache(maxsize=None)
def schur_form(r: int) -> SchurForm:
    return real_schur(time_matrices(r))
