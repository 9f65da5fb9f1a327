"""Slab solvers: Schur-decomposed monolithic solves and fixed-stress coupling.

One dG(r) slab couples r+1 copies of the spatial system through the small
time matrices. After the real Schur transform ``W = Q T Q^T`` the slab
system becomes quasi upper triangular in the time index,

    (T (x) D + tau I (x) K) Y = (Q^T M_hat^{-1} (x) I) R,    X = (Q (x) I) Y,

so it is solved by back substitution over 1x1 (dG(0)-type) and 2x2
(dG(1)-type) diagonal blocks ``lambda D + tau K``. Off-diagonal couplings are
``T[j, k] D`` and touch only the time-derivative (mass-row) entries.
"""
from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    Loads,
    SpatialOperators,
    assemble_operators,
    assemble_rhs,
    assemble_source,
    build_dof_maps,
    initial_state,
    interpolate_flux,
    project_displacement,
    project_pressure,
)
from .linsolve import SolverReport, gmres, spmv
from .mesh import build_mesh
from .time_dg import SchurForm, TimeBasis, TimePartition, schur_form, time_matrices

log = logging.getLogger(__name__)

METHODS = ("monolithic-spectral", "fixed-stress")
BLOCK_SOLVERS = ("direct", "gmres")


class SolverFailure(RuntimeError):
    def __init__(self, message, slab_index=None, block_index=None, report=None):
        super().__init__(message)
        self.slab_index = slab_index
        self.block_index = block_index
        self.report = report


@dataclass
class FixedStressConfig:
    stab: float | None = None  # None -> b^2 / K_dr
    tol: float = 1e-10
    max_sweeps: int = 500
    truncation_sweeps: int = 1

    def __post_init__(self):
        if self.stab is not None and not self.stab > 0:
            raise ValueError(f"stabilization must be positive, got {self.stab}")
        if self.truncation_sweeps < 1:
            raise ValueError("truncation_sweeps must be >= 1")

    def stabilization(self, ops: SpatialOperators) -> float:
        if self.stab is not None:
            return float(self.stab)
        return ops.biot_b ** 2 / ops.k_dr


@dataclass
class SolverConfig:
    block_solver: str = "direct"
    tol: float = 1e-8
    restart: int = 100
    max_iter: int = 500
    fs: FixedStressConfig = field(default_factory=FixedStressConfig)

    def __post_init__(self):
        if self.block_solver not in BLOCK_SOLVERS:
            raise ValueError(f"block_solver must be one of {BLOCK_SOLVERS}, got {self.block_solver!r}")


# ------------------------------------------------------------- time blocks


class _Factor:
    """Sparse LU with a plain ``solve`` method."""

    def __init__(self, M):
        self.lu = spla.splu(sp.csc_matrix(M))

    def solve(self, b):
        return self.lu.solve(np.asarray(b, dtype=np.float64))


class TimeBlock:
    """``T (x) D + tau I (x) K`` for an m x m time matrix (m = 1 or 2).

    Vectors are flattened component-major: ``x = [x_0, ..., x_{m-1}]`` with
    each ``x_a = (u_a, q_a, p_a)``.
    """

    def __init__(self, ops: SpatialOperators, tmat, tau: float, stab: float | None = None,
                 mech_factor: _Factor | None = None):
        self.ops = ops
        self.tmat = np.atleast_2d(np.asarray(tmat, dtype=np.float64))
        self.m = self.tmat.shape[0]
        self.tau = float(tau)
        self.stab = ops.biot_b ** 2 / ops.k_dr if stab is None else float(stab)
        self.n = ops.n_total
        self._K = ops.stationary()
        self._mech = mech_factor
        self._flow = None
        self._direct = None
        self._ET = ops.E.T.tocsr()
        self._BT = ops.B.T.tocsr()

    @property
    def shape(self):
        return (self.m * self.n, self.m * self.n)

    def split(self, x):
        o = self.ops
        X = np.asarray(x).reshape(self.m, self.n)
        return X[:, :o.n_u], X[:, o.n_u:o.n_u + o.n_q], X[:, o.n_u + o.n_q:]

    def join(self, u, q, p):
        return np.concatenate([np.atleast_2d(u), np.atleast_2d(q), np.atleast_2d(p)], axis=1).ravel()

    def matvec(self, x):
        o = self.ops
        X = np.asarray(x, dtype=np.float64).reshape(self.m, self.n)
        Y = np.empty_like(X)
        dmass = [o.apply_derivative(*self._up(X[b])) for b in range(self.m)]
        for a in range(self.m):
            Y[a] = self.tau * spmv(self._K, X[a])
            for b in range(self.m):
                if self.tmat[a, b] != 0.0:
                    Y[a, o.n_u + o.n_q:] += self.tmat[a, b] * dmass[b]
        return Y.ravel()

    def _up(self, xa):
        o = self.ops
        return xa[:o.n_u], xa[o.n_u + o.n_q:]

    def matrix(self) -> sp.csr_matrix:
        D = self.ops.derivative()
        return (sp.kron(self.tmat, D) + self.tau * sp.kron(np.eye(self.m), self._K)).tocsr()

    # --- factorizations, created lazily and independently of each other

    def mechanics_factor(self) -> _Factor:
        if self._mech is None:
            self._mech = _Factor(self.tau * self.ops.A)
        return self._mech

    def flow_factor(self) -> _Factor:
        if self._flow is None:
            o = self.ops
            stor = -(o.inv_m + self.stab) * o.M_p
            rows = []
            for a in range(self.m):
                row = []
                for b in range(self.m):
                    t = self.tmat[a, b]
                    if a == b:
                        row.append(sp.bmat([[self.tau * o.M_q, self.tau * o.B],
                                            [self.tau * o.B.T, t * stor]]))
                    elif t != 0.0:
                        row.append(sp.bmat([[None, sp.csr_matrix((o.n_q, o.n_p))],
                                            [sp.csr_matrix((o.n_p, o.n_q)), t * stor]]))
                    else:
                        row.append(None)
                rows.append(row)
            self._flow = _Factor(sp.bmat(rows, format="csc"))
        return self._flow

    def direct_factor(self) -> _Factor:
        if self._direct is None:
            self._direct = _Factor(self.matrix())
        return self._direct

    def prepare(self, kind: str) -> "TimeBlock":
        if kind == "direct":
            self.direct_factor()
        else:
            self.flow_factor()
            self.mechanics_factor()
        return self

    # --- fixed-stress sweep

    def fs_sweep(self, rhs, u_k, p_k):
        """One flow-then-mechanics sweep starting from ``(u_k, p_k)``."""
        o = self.ops
        ru, rq, rp = self.split(rhs)
        b = o.biot_b
        lag = [b * (self._ET @ u_k[c]) - self.stab * (o.M_p @ p_k[c]) for c in range(self.m)]
        frhs = []
        for a in range(self.m):
            extra = sum(self.tmat[a, c] * lag[c] for c in range(self.m))
            frhs.append(np.concatenate([rq[a], rp[a] + extra]))
        sol = self.flow_factor().solve(np.concatenate(frhs)).reshape(self.m, o.n_q + o.n_p)
        q, p = sol[:, :o.n_q], sol[:, o.n_q:]
        mech = self.mechanics_factor()
        u = np.array([mech.solve(ru[a] + b * self.tau * (o.E @ p[a])) for a in range(self.m)])
        return u, q, p


def fixed_stress_solve(block: TimeBlock, rhs, cfg: FixedStressConfig, x0=None):
    """Iterative fixed-stress coupling on one diagonal time block.

    Each sweep solves the flow problem with the volumetric stress lagged
    (storage raised by ``stab``) and then the mechanics with the new
    pressure. Stops on the relative true residual of the coupled block.
    The starting iterate takes the pressure of ``x0`` (zero by default) and
    the displacement in mechanical equilibrium with it, so every recorded
    residual lives in the flow rows only.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    o = block.ops
    ru, _, _ = block.split(rhs)
    if x0 is None:
        q = np.zeros((block.m, o.n_q))
        p = np.zeros((block.m, o.n_p))
    else:
        _, q, p = (a.copy() for a in block.split(np.asarray(x0, dtype=np.float64)))
    mech = block.mechanics_factor()
    b = o.biot_b
    u = np.array([mech.solve(ru[a] + b * block.tau * (o.E @ p[a])) for a in range(block.m)])
    x = block.join(u, q, p)
    rnorm0 = np.linalg.norm(rhs)
    target = cfg.tol * rnorm0 if rnorm0 > 0 else 1e-14
    res = np.linalg.norm(rhs - block.matvec(x))
    history = [float(res)]
    sweeps = 0
    while res > target and sweeps < cfg.max_sweeps:
        u, q, p = block.fs_sweep(rhs, u, p)
        x = block.join(u, q, p)
        res = np.linalg.norm(rhs - block.matvec(x))
        history.append(float(res))
        sweeps += 1
    rel = res / rnorm0 if rnorm0 > 0 else res
    report = SolverReport(bool(res <= target), sweeps, history, float(rel), kind="fixed-stress", sweeps=sweeps)
    return x, report


def apply_fs_preconditioner(block: TimeBlock, residual, cfg: FixedStressConfig):
    """``truncation_sweeps`` fixed-stress sweeps from a zero initial guess (a linear map)."""
    o = block.ops
    u = np.zeros((block.m, o.n_u))
    p = np.zeros((block.m, o.n_p))
    for _ in range(cfg.truncation_sweeps):
        u, q, p = block.fs_sweep(residual, u, p)
    return block.join(u, q, p)


class BlockCache:
    """Reuses blocks and factorizations across slabs with equal (T, tau)."""

    def __init__(self, ops: SpatialOperators, stab: float | None = None):
        self.ops = ops
        self.stab = stab
        self._blocks: dict = {}
        self._mech: dict = {}

    def block(self, tmat, tau: float) -> TimeBlock:
        tmat = np.atleast_2d(np.asarray(tmat, dtype=np.float64))
        key = (tmat.tobytes(), tmat.shape, float(tau))
        blk = self._blocks.get(key)
        if blk is None:
            mech = self._mech.get(float(tau))
            blk = TimeBlock(self.ops, tmat, tau, self.stab, mech_factor=mech)
            self._blocks[key] = blk
        return blk

    def remember(self, blk: TimeBlock):
        if blk._mech is not None:
            self._mech.setdefault(blk.tau, blk._mech)


def solve_block(blk: TimeBlock, rhs, method: str, cfg: SolverConfig, cache: BlockCache | None = None):
    """Solve one 1x1 or 2x2 diagonal time block."""
    rhs = np.asarray(rhs, dtype=np.float64)
    kind = "2x2" if blk.m == 2 else "1x1"
    if method == "fixed-stress":
        x, rep = fixed_stress_solve(blk, rhs, cfg.fs)
    elif cfg.block_solver == "direct":
        x = blk.direct_factor().solve(rhs)
        bn = np.linalg.norm(rhs)
        res = float(np.linalg.norm(rhs - blk.matvec(x)))
        rep = SolverReport(True, 0, [res], res / bn if bn > 0 else res, kind="direct")
    else:
        if blk.m == 1:
            def precond(v):
                return apply_fs_preconditioner(blk, v, cfg.fs)
        else:
            subs = [(cache.block if cache else (lambda t, tau: TimeBlock(blk.ops, t, tau, blk.stab, blk._mech)))(
                [[blk.tmat[a, a]]], blk.tau) for a in range(blk.m)]
            n = blk.n

            def precond(v):
                return np.concatenate([apply_fs_preconditioner(s, v[a * n:(a + 1) * n], cfg.fs)
                                       for a, s in enumerate(subs)])
        x, rep = gmres(blk.matvec, precond, rhs, tol=cfg.tol, restart=cfg.restart, max_iter=cfg.max_iter)
        rep.kind = "gmres"
        rep.sweeps = rep.iterations * cfg.fs.truncation_sweeps
    rep.block_type = kind
    if cache is not None:
        cache.remember(blk)
    return x, rep


# ---------------------------------------------------------------- slabs


@dataclass
class SlabState:
    u: np.ndarray  # (r+1, n_u), nodal values at the Radau points
    q: np.ndarray
    p: np.ndarray
    t0: float
    tau: float
    nodes: np.ndarray
    weights: np.ndarray
    u_prev: np.ndarray
    p_prev: np.ndarray

    @property
    def end_trace(self):
        return self.u[-1], self.q[-1], self.p[-1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.tau * self.nodes

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u, self.q, self.p], axis=1)


@dataclass
class SlabSystem:
    ops: SpatialOperators
    basis: TimeBasis
    schur: SchurForm
    tau: float
    rhs: np.ndarray  # (r+1, n): tau * M_hat F + phi(0) D x_prev
    jump_data: tuple[np.ndarray, np.ndarray]
    t0: float = 0.0

    @property
    def r(self) -> int:
        return self.basis.r

    def full_matrix(self) -> sp.csr_matrix:
        D = self.ops.derivative()
        K = self.ops.stationary()
        return (sp.kron(self.basis.G_hat, D) + self.tau * sp.kron(self.basis.M_hat, K)).tocsr()

    def full_rhs(self) -> np.ndarray:
        return self.rhs.ravel()

    def transformed_rhs(self) -> np.ndarray:
        Minv_R = np.linalg.solve(self.basis.M_hat, self.rhs)
        return self.schur.Q.T @ Minv_R

    def diagonal_block(self, j: int) -> sp.csr_matrix:
        return self.ops.diagonal_block(self.schur.T[j, j], self.tau)

    def coupling(self, j: int, k: int) -> sp.csr_matrix:
        return (self.schur.T[j, k] * self.ops.derivative()).tocsr()

    def transformed_matrix(self) -> sp.csr_matrix:
        D = self.ops.derivative()
        K = self.ops.stationary()
        return (sp.kron(self.schur.T, D) + self.tau * sp.kron(np.eye(self.r + 1), K)).tocsr()


def stack_rhs(b_u, b_q, b_p) -> np.ndarray:
    """Row-convention right-hand side (the mass row carries ``-b_p``)."""
    return np.concatenate([b_u, b_q, -np.asarray(b_p)])


def build_slab_system(ops: SpatialOperators, basis: TimeBasis, schur: SchurForm, tau: float, rhs_fields,
                      jump_data, t0: float = 0.0) -> SlabSystem:
    """``rhs_fields`` holds the row-convention load at the r+1 time nodes."""
    F = np.asarray(rhs_fields, dtype=np.float64)
    n = ops.n_total
    if F.shape != (basis.r + 1, n):
        raise ValueError(f"rhs_fields must have shape {(basis.r + 1, n)}, got {F.shape}")
    u_prev, p_prev = (np.asarray(a, dtype=np.float64) for a in jump_data)
    if u_prev.shape != (ops.n_u,) or p_prev.shape != (ops.n_p,):
        raise ValueError("jump data has the wrong size")
    R = tau * (basis.M_hat @ F)
    R[:, ops.n_u + ops.n_q:] += np.outer(basis.phi_at_0, ops.apply_derivative(u_prev, p_prev))
    return SlabSystem(ops, basis, schur, float(tau), R, (u_prev, p_prev), float(t0))


def solve_slab_monolithic(system: SlabSystem, cfg: SolverConfig | None = None, method: str = "monolithic-spectral",
                          cache: BlockCache | None = None, executor: Executor | None = None):
    """Back substitution over the Schur blocks, then ``X = Q Y``.

    Diagonal blocks share no data except through the substitution, so their
    factorizations can be prepared concurrently when an executor is given.
    """
    cfg = cfg or SolverConfig()
    ops, S = system.ops, system.schur
    cache = cache or BlockCache(ops, cfg.fs.stab)
    Rt = system.transformed_rhs()
    Y = np.zeros_like(Rt)
    blocks = [cache.block(S.T[np.ix_(b, b)], system.tau) for b in S.block_layout]
    kind = "direct" if method != "fixed-stress" and cfg.block_solver == "direct" else "iterative"
    if executor is not None:
        for fut in [executor.submit(blk.prepare, kind) for blk in blocks]:
            fut.result()
    reports = []
    mass = slice(ops.n_u + ops.n_q, None)
    for idx in reversed(range(len(S.block_layout))):
        b = S.block_layout[idx]
        rhs = Rt[list(b)].copy()
        later = range(b[-1] + 1, S.T.shape[0])
        for k in later:
            dk = ops.apply_derivative(Y[k, :ops.n_u], Y[k, mass])
            for row, j in enumerate(b):
                if S.T[j, k] != 0.0:
                    rhs[row, mass] -= S.T[j, k] * dk
        x, rep = solve_block(blocks[idx], rhs.ravel(), method, cfg, cache)
        rep.block_index = idx
        if not rep.converged:
            raise SolverFailure(f"block {idx} ({rep.block_type}) did not converge "
                                f"(relative residual {rep.final_relative_residual:.3e})", block_index=idx, report=rep)
        Y[list(b)] = x.reshape(len(b), -1)
        reports.append(rep)
    reports.reverse()
    X = S.Q @ Y
    state = SlabState(
        u=X[:, :ops.n_u], q=X[:, ops.n_u:ops.n_u + ops.n_q], p=X[:, ops.n_u + ops.n_q:],
        t0=system.t0, tau=system.tau, nodes=system.basis.nodes, weights=system.basis.weights,
        u_prev=system.jump_data[0], p_prev=system.jump_data[1],
    )
    return state, reports


# -------------------------------------------------------------- marching


@dataclass
class Discretization:
    problem: object
    mesh: object
    dofs: object
    ops: SpatialOperators
    reference: tuple[np.ndarray, np.ndarray]

    def rhs_at(self, t: float) -> np.ndarray:
        pb = self.problem
        return stack_rhs(*assemble_rhs(self.mesh, self.dofs, pb.material, pb.loads, pb.bc, self.ops, t,
                                       initial=self.reference))

    def source_at(self, t: float) -> np.ndarray:
        return assemble_source(self.mesh, self.problem.loads.source, t)

    def initial_condition(self):
        """Coefficient vectors (u, p) entering the first slab through the jump."""
        pb = self.problem
        if pb.initial_projection == "elliptic":
            return self.elliptic_initial_state(pb.initial_q)
        if pb.initial_u is None and pb.initial_p is None:
            return self.reference
        return (project_displacement(self.mesh, self.dofs, pb.initial_u),
                project_pressure(self.mesh, pb.initial_p))

    def elliptic_initial_state(self, q_fn, t: float = 0.0):
        """Mixed Darcy projection of the pressure, then the equilibrium displacement.

        The pressure solves ``M_q q + B p = b_q``, ``B^T q = B^T g`` with ``g``
        the interpolated flux; ``u`` solves the momentum row with that pressure.
        """
        o = self.ops
        rhs = self.rhs_at(t)
        b_u, b_q = rhs[:o.n_u], rhs[o.n_u:o.n_u + o.n_q]
        g = interpolate_flux(self.mesh, self.dofs, q_fn, t)
        S = sp.bmat([[o.M_q, o.B], [o.B.T, None]], format="csc")
        x = spla.splu(S).solve(np.concatenate([b_q, o.B.T @ g]))
        p = x[o.n_q:]
        u = spla.splu(sp.csc_matrix(o.A)).solve(b_u + o.biot_b * (o.E @ p))
        return u, p


def discretize(problem, penalty: float = 10.0) -> Discretization:
    mesh = build_mesh(problem.nx, problem.ny, problem.lx, problem.ly)
    dofs = build_dof_maps(mesh)
    ops = assemble_operators(mesh, dofs, problem.material, penalty, problem.bc)
    return Discretization(problem, mesh, dofs, ops, initial_state(mesh, dofs, problem.material))


@dataclass
class Trajectory:
    disc: Discretization
    partition: TimePartition
    r: int
    method: str
    states: list[SlabState] = field(default_factory=list)
    reports: list[list[SolverReport]] = field(default_factory=list)

    @property
    def final(self) -> SlabState:
        return self.states[-1]


def march(problem, partition: TimePartition, r: int, method: str = "monolithic-spectral",
          solver: SolverConfig | None = None, penalty: float = 10.0, disc: Discretization | None = None,
          callback: Callable | None = None, executor: Executor | None = None) -> Trajectory:
    """Sequential slab loop; slab n+1 starts from the end trace of slab n."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    solver = solver or SolverConfig()
    disc = disc or discretize(problem, penalty)
    basis = time_matrices(r)
    schur = schur_form(r)
    cache = BlockCache(disc.ops, solver.fs.stab)
    traj = Trajectory(disc, partition, r, method)
    u_prev, p_prev = disc.initial_condition()
    for n in range(1, partition.n_slabs + 1):
        t0, t1 = partition.slab(n)
        tau = t1 - t0
        F = np.array([disc.rhs_at(t0 + tau * s) for s in basis.nodes])
        system = build_slab_system(disc.ops, basis, schur, tau, F, (u_prev, p_prev), t0)
        try:
            state, reports = solve_slab_monolithic(system, solver, method, cache, executor)
        except SolverFailure as exc:
            exc.slab_index = n
            raise SolverFailure(f"slab {n}: {exc}", slab_index=n, block_index=exc.block_index,
                                report=exc.report) from exc
        traj.states.append(state)
        traj.reports.append(reports)
        u_prev, p_prev = state.u[-1], state.p[-1]
        log.debug("slab %d t=%.6g iterations=%s", n, t1, [rp.iterations for rp in reports])
        if callback is not None:
            callback(n, state, reports)
    return traj


def empty_loads() -> Loads:
    return Loads()
