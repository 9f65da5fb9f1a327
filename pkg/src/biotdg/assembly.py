"""Degrees of freedom and spatial operator assembly for the Biot system.

Lowest-order discretization on a structured rectangle mesh:

* displacement: discontinuous bilinear (Q1) per cell, symmetric interior
  penalty (SIPG) for the elasticity operator, Nitsche-type boundary faces;
* flux: one normal-flux dof per face (lowest-order Raviart-Thomas on
  rectangles), dof value = normal flux density along the face normal;
* pressure: one constant per cell.

Sign conventions for the monolithic rows (used by :mod:`biotdg.coupling`)::

    momentum   A u           - b E p               = b_u
    Darcy              M_q q +   B p               = b_q
    mass       -b E^T u'  + B^T q - (1/M) M_p p'   = -b_p

with ``E ~ (p, div v)``, ``B ~ -(p, div w)`` and ``b_p`` the physical source
load. The mass row is the negated balance law so that ``B`` and ``E``
transposes are shared exactly with the other rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .mesh import BOUNDARY_TAGS, FACE_BOTTOM, FACE_LEFT, FACE_RIGHT, FACE_TOP, TAG_NAMES, Mesh

DIM = 2

MECH_KINDS = ("fixed", "roller", "traction")
FLOW_KINDS = ("pressure", "flux")


class AssemblyError(ValueError):
    pass


# ------------------------------------------------------------------ materials


@dataclass
class MaterialParameters:
    lambda_lame: float = 1.0
    mu_lame: float = 1.0
    k_perm: float | np.ndarray = 1.0
    eta: float = 1.0
    biot_b: float | None = 0.8
    biot_m: float = 10.0
    k_dr: float | None = None
    k_s: float | None = None
    rho_b: float = 0.0
    rho_f: float = 0.0
    gravity: tuple[float, float] = (0.0, 0.0)
    sigma0_v: float | np.ndarray = 0.0
    u0: Callable | None = None
    p0: Callable | None = None

    def __post_init__(self):
        if self.mu_lame <= 0:
            raise AssemblyError(f"mu_lame must be positive, got {self.mu_lame}")
        if self.lambda_lame + self.mu_lame <= 0:
            raise AssemblyError("lambda_lame + mu_lame must be positive")
        if np.any(np.asarray(self.k_perm) <= 0):
            raise AssemblyError("k_perm must be positive")
        if self.eta <= 0:
            raise AssemblyError(f"eta must be positive, got {self.eta}")
        if self.biot_m <= 0:
            raise AssemblyError(f"biot_m must be positive, got {self.biot_m}")
        kdr = self.lambda_lame + 2.0 * self.mu_lame / DIM
        if self.k_dr is None:
            self.k_dr = kdr
        elif not np.isclose(self.k_dr, kdr, rtol=1e-12, atol=0.0):
            raise AssemblyError(f"k_dr={self.k_dr} inconsistent with lambda + 2 mu / d = {kdr}")
        if self.k_s is not None and np.isfinite(self.k_s):
            if self.k_s <= 0:
                raise AssemblyError("k_s must be positive")
            b = 1.0 - self.k_dr / self.k_s
            if self.biot_b is None:
                self.biot_b = b
            elif not np.isclose(self.biot_b, b, rtol=1e-12, atol=1e-14):
                raise AssemblyError(f"biot_b={self.biot_b} inconsistent with 1 - k_dr/k_s = {b}")
        if self.biot_b is None:
            raise AssemblyError("biot_b or a finite k_s is required")
        # b = 0 is accepted here as the decoupled limit; configs reject it
        if not 0.0 <= self.biot_b <= 1.0:
            raise AssemblyError(f"biot_b must lie in [0, 1], got {self.biot_b}")
        self.gravity = tuple(float(g) for g in self.gravity)

    @property
    def constrained_modulus(self) -> float:
        return self.lambda_lame + 2.0 * self.mu_lame

    def mobility(self, n_cells: int) -> np.ndarray:
        """Per-cell k / eta."""
        return np.broadcast_to(np.asarray(self.k_perm, float), (n_cells,)) / self.eta


def storage_fixed_stress_form(eps_v_rate, p_rate, mat: MaterialParameters):
    """(b/K_dr) d/dt sigma_v + (1/M + b^2/K_dr) d/dt p, with sigma_v' = K_dr eps_v' - b p'."""
    b, kdr = mat.biot_b, mat.k_dr
    sigma_rate = kdr * np.asarray(eps_v_rate) - b * np.asarray(p_rate)
    return (b / kdr) * sigma_rate + (1.0 / mat.biot_m + b * b / kdr) * np.asarray(p_rate)


def storage_standard_form(eps_v_rate, p_rate, mat: MaterialParameters):
    return mat.biot_b * np.asarray(eps_v_rate) + np.asarray(p_rate) / mat.biot_m


# -------------------------------------------------------- boundary conditions


@dataclass(frozen=True)
class BoundarySpec:
    """One mechanical and one flow condition per boundary tag.

    Mechanical kinds: ``fixed`` (both components prescribed), ``roller``
    (normal component prescribed, zero tangential traction), ``traction``.
    Flow kinds: ``pressure`` (natural in the mixed form) or ``flux``
    (essential on the normal-flux dofs).
    """

    mechanics: Mapping[str, str]
    flow: Mapping[str, str]

    def __post_init__(self):
        for name, kinds, table in (("mechanics", MECH_KINDS, self.mechanics), ("flow", FLOW_KINDS, self.flow)):
            missing = [t for t in BOUNDARY_TAGS if t not in table]
            if missing:
                raise AssemblyError(f"BoundarySpec has no {name} condition for {missing}")
            extra = [t for t in table if t not in BOUNDARY_TAGS]
            if extra:
                raise AssemblyError(f"unknown boundary tags {extra}")
            bad = {t: k for t, k in table.items() if k not in kinds}
            if bad:
                raise AssemblyError(f"invalid {name} kinds {bad}; allowed {kinds}")

    def projector(self, tag: str, normal) -> np.ndarray:
        kind = self.mechanics[tag]
        n = np.asarray(normal, float)
        if kind == "fixed":
            return np.eye(2)
        if kind == "roller":
            return np.outer(n, n)
        return np.zeros((2, 2))


@dataclass
class Loads:
    """Time-dependent data. Callables take ``(x, y, t)`` with array x, y.

    ``body_force`` returns a pair (fx, fy) and replaces the default
    ``rho_b * gravity``. ``displacement`` data must be time-independent.
    """

    body_force: Callable | None = None
    source: Callable | None = None
    traction: dict[str, Callable] = field(default_factory=dict)
    pressure: dict[str, Callable] = field(default_factory=dict)
    flux: dict[str, Callable] = field(default_factory=dict)
    displacement: dict[str, Callable] = field(default_factory=dict)


# ------------------------------------------------------------------ quadrature


def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _tensor_rule(n: int):
    s, w = gauss01(n)
    XI, ETA = np.meshgrid(s, s, indexing="ij")
    W = np.outer(w, w)
    return XI.ravel(), ETA.ravel(), W.ravel()


def q1_values(xi, eta):
    """Bilinear shape functions and reference derivatives, each (4, nq)."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    v = np.array([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])
    dxi = np.array([-(1 - eta), (1 - eta), -eta, eta])
    deta = np.array([-(1 - xi), -xi, (1 - xi), xi])
    return v, dxi, deta


def vector_basis(xi, eta, hx, hy):
    """Values (8, nq, 2) and gradients (8, nq, 2, 2) of the vector Q1 basis.

    Local index ``i = 4 * component + node``; ``grad[i, q, k, l] = d v_k / d x_l``.
    """
    v, dxi, deta = q1_values(xi, eta)
    nq = v.shape[1]
    vals = np.zeros((8, nq, 2))
    grads = np.zeros((8, nq, 2, 2))
    for c in range(2):
        vals[4 * c:4 * c + 4, :, c] = v
        grads[4 * c:4 * c + 4, :, c, 0] = dxi / hx
        grads[4 * c:4 * c + 4, :, c, 1] = deta / hy
    return vals, grads


def _stress(grads, lam, mu):
    eps = 0.5 * (grads + np.swapaxes(grads, -1, -2))
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    return 2.0 * mu * eps + lam * tr[..., None, None] * np.eye(2)


# reference coordinates of a face slot as a function of the face parameter s
_SLOT_COORDS = {
    FACE_BOTTOM: lambda s: (s, np.zeros_like(s)),
    FACE_TOP: lambda s: (s, np.ones_like(s)),
    FACE_LEFT: lambda s: (np.zeros_like(s), s),
    FACE_RIGHT: lambda s: (np.ones_like(s), s),
}


def _face_trace(slot, s, hx, hy, normal, lam, mu):
    xi, eta = _SLOT_COORDS[slot](s)
    vals, grads = vector_basis(xi, eta, hx, hy)
    trac = np.einsum("iqkl,l->iqk", _stress(grads, lam, mu), np.asarray(normal, float))
    return vals, trac


# ---------------------------------------------------------------------- dofs


@dataclass(frozen=True, eq=False)
class DofMaps:
    n_u: int
    n_q: int
    n_p: int
    cell_u: np.ndarray  # (nc, 8)
    cell_q: np.ndarray  # (nc, 4) face dofs in slot order bottom, top, left, right
    cell_p: np.ndarray  # (nc,)
    face_q: np.ndarray  # (nf,)

    @property
    def n_total(self) -> int:
        return self.n_u + self.n_q + self.n_p

    def split(self, x):
        x = np.asarray(x)
        return x[..., :self.n_u], x[..., self.n_u:self.n_u + self.n_q], x[..., self.n_u + self.n_q:]


def build_dof_maps(mesh: Mesh) -> DofMaps:
    nc = mesh.n_cells
    cell_u = 8 * np.arange(nc, dtype=np.int64)[:, None] + np.arange(8, dtype=np.int64)
    return DofMaps(
        n_u=8 * nc,
        n_q=mesh.n_faces,
        n_p=nc,
        cell_u=cell_u,
        cell_q=mesh.cell_faces.copy(),
        cell_p=np.arange(nc, dtype=np.int64),
        face_q=np.arange(mesh.n_faces, dtype=np.int64),
    )


# ------------------------------------------------------------------ operators


def _csr(rows, cols, vals, shape) -> sp.csr_matrix:
    indptr, indices, data = _kernels.coo_to_csr(rows, cols, vals, shape[0], shape[1])
    return sp.csr_matrix((data, indices, indptr), shape=shape)


@dataclass(eq=False)
class SpatialOperators:
    A: sp.csr_matrix
    M_q: sp.csr_matrix
    B: sp.csr_matrix
    E: sp.csr_matrix
    M_p: sp.csr_matrix
    penalty: float
    biot_b: float
    inv_m: float
    k_dr: float
    n_u: int
    n_q: int
    n_p: int
    flux_dofs: np.ndarray
    M_q_full: sp.csr_matrix
    B_full: sp.csr_matrix

    @property
    def n_total(self) -> int:
        return self.n_u + self.n_q + self.n_p

    def stationary(self) -> sp.csr_matrix:
        """K = [[A, 0, -bE], [0, M_q, B], [0, B^T, 0]]."""
        b = self.biot_b
        return sp.bmat([
            [self.A, None, -b * self.E],
            [None, self.M_q, self.B],
            [None, self.B.T, sp.csr_matrix((self.n_p, self.n_p))],
        ], format="csr")

    def derivative(self) -> sp.csr_matrix:
        """D: only the mass row, [-b E^T, 0, -(1/M) M_p]."""
        b = self.biot_b
        z = sp.csr_matrix
        return sp.bmat([
            [z((self.n_u, self.n_u)), None, z((self.n_u, self.n_p))],
            [None, z((self.n_q, self.n_q)), None],
            [-b * self.E.T, None, -self.inv_m * self.M_p],
        ], format="csr")

    def diagonal_block(self, lam: float, tau: float) -> sp.csr_matrix:
        """The dG(0)-type block ``lam * D + tau * K``."""
        return (lam * self.derivative() + tau * self.stationary()).tocsr()

    def apply_derivative(self, u, p):
        """Mass-row part of D applied to (u, p)."""
        return -self.biot_b * (self.E.T @ u) - self.inv_m * (self.M_p @ p)


def _sipg_volume(hx, hy, lam, mu):
    xi, eta, w = _tensor_rule(2)
    _, grads = vector_basis(xi, eta, hx, hy)
    sig = _stress(grads, lam, mu)
    K = np.einsum("q,jqkl,iqkl->ij", w * hx * hy, sig, grads)
    div = np.einsum("q,iqkk->i", w * hx * hy, grads)
    return 0.5 * (K + K.T), div


def _interior_face_mats(horizontal, hx, hy, lam, mu, pen):
    s, w = gauss01(2)
    if horizontal:
        n, length = (0.0, 1.0), hx
        vm, tm = _face_trace(FACE_TOP, s, hx, hy, n, lam, mu)
        vp, tp = _face_trace(FACE_BOTTOM, s, hx, hy, n, lam, mu)
    else:
        n, length = (1.0, 0.0), hy
        vm, tm = _face_trace(FACE_RIGHT, s, hx, hy, n, lam, mu)
        vp, tp = _face_trace(FACE_LEFT, s, hx, hy, n, lam, mu)
    J = np.concatenate([vm, -vp])
    T = 0.5 * np.concatenate([tm, tp])
    wq = w * length
    cons = np.einsum("q,jqk,iqk->ij", wq, T, J)
    Kf = -cons - cons.T + pen * np.einsum("q,jqk,iqk->ij", wq, J, J)
    jump_n = -np.einsum("q,iqk,k->i", wq, J, np.asarray(n))
    return 0.5 * (Kf + Kf.T), jump_n


_TAG_SLOT = {"left": FACE_LEFT, "right": FACE_RIGHT, "bottom": FACE_BOTTOM, "top": FACE_TOP}


def _boundary_face_mats(tag, normal, P, hx, hy, lam, mu, pen):
    s, w = gauss01(2)
    vals, trac = _face_trace(_TAG_SLOT[tag], s, hx, hy, normal, lam, mu)
    length = hx if tag in ("bottom", "top") else hy
    wq = w * length
    PT = np.einsum("kl,iql->iqk", P, trac)
    PJ = np.einsum("kl,iql->iqk", P, vals)
    cons = np.einsum("q,jqk,iqk->ij", wq, PT, vals)
    Kf = -cons - cons.T + pen * np.einsum("q,jqk,iqk->ij", wq, PJ, vals)
    e = -np.einsum("q,iqk,k->i", wq, vals, P @ np.asarray(normal, float))
    return 0.5 * (Kf + Kf.T), e


def assemble_operators(mesh: Mesh, dofs: DofMaps, mat: MaterialParameters, penalty: float = 10.0,
                       bc: BoundarySpec | None = None) -> SpatialOperators:
    """Assemble A, M_q, B, E, M_p.

    ``penalty`` is the dimensionless SIPG coefficient gamma; the face penalty
    weight is ``gamma * (lambda + 2 mu) / h_F`` with ``h_F = |K| / |F|``.
    """
    if not penalty > 0:
        raise AssemblyError(f"penalty must be positive, got {penalty}")
    if bc is None:
        raise AssemblyError("a BoundarySpec is required")
    hx, hy = mesh.hx, mesh.hy
    lam, mu = mat.lambda_lame, mat.mu_lame
    nc, nf = mesh.n_cells, mesh.n_faces
    n_u, n_q, n_p = dofs.n_u, dofs.n_q, dofs.n_p
    stiff = lam + 2.0 * mu

    # --- elasticity (A) and pressure coupling (E)
    rows, cols, vals = [], [], []
    erows, ecols, evals = [], [], []

    Kvol, divvol = _sipg_volume(hx, hy, lam, mu)
    r_, c_, v_ = _kernels.scatter_local(dofs.cell_u, dofs.cell_u, np.broadcast_to(Kvol, (nc, 8, 8)))
    rows.append(r_); cols.append(c_); vals.append(v_)
    erows.append(dofs.cell_u.ravel())
    ecols.append(np.repeat(dofs.cell_p, 8))
    evals.append(np.tile(divvol, nc))

    interior = mesh.interior_faces()
    for horizontal in (True, False):
        fs = interior[mesh.face_horizontal[interior] == horizontal]
        if fs.size == 0:
            continue
        h_f = hy if horizontal else hx
        Kf, jn = _interior_face_mats(horizontal, hx, hy, lam, mu, penalty * stiff / h_f)
        cm, cp = mesh.face_cells[fs, 0], mesh.face_cells[fs, 1]
        fd = np.concatenate([dofs.cell_u[cm], dofs.cell_u[cp]], axis=1)
        r_, c_, v_ = _kernels.scatter_local(fd, fd, np.broadcast_to(Kf, (fs.size, 16, 16)))
        rows.append(r_); cols.append(c_); vals.append(v_)
        for pc in (cm, cp):
            erows.append(fd.ravel())
            ecols.append(np.repeat(pc, 16))
            evals.append(np.tile(0.5 * jn, fs.size))

    for f in mesh.boundary_faces():
        tag = TAG_NAMES[int(mesh.face_tag[f])]
        P = bc.projector(tag, mesh.face_normal[f])
        if not P.any():
            continue
        h_f = hy if mesh.face_horizontal[f] else hx
        Kf, e = _boundary_face_mats(tag, mesh.face_normal[f], P, hx, hy, lam, mu, penalty * stiff / h_f)
        cell = mesh.face_cells[f, 0]
        d = dofs.cell_u[cell]
        rows.append(np.repeat(d, 8)); cols.append(np.tile(d, 8)); vals.append(Kf.ravel())
        erows.append(d); ecols.append(np.full(8, cell)); evals.append(e)

    A = _csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n_u, n_u))
    A = _symmetrize(A)
    E = _csr(np.concatenate(erows), np.concatenate(ecols), np.concatenate(evals), (n_u, n_p))

    # --- flux mass, divergence
    xi, eta, w = _tensor_rule(2)
    wl = _local_flux_basis(xi, eta)
    Mloc = np.einsum("q,aqk,bqk->ab", w * hx * hy, wl, wl)
    resist = 1.0 / mat.mobility(nc)
    sgn = mesh.cell_face_sign
    mloc = resist[:, None, None] * sgn[:, :, None] * sgn[:, None, :] * Mloc
    r_, c_, v_ = _kernels.scatter_local(dofs.cell_q, dofs.cell_q, mloc)
    M_q_full = _symmetrize(_csr(r_, c_, v_, (n_q, n_q)))

    flen = mesh.face_length[dofs.cell_q]
    B_full = _csr(dofs.cell_q.ravel(), np.repeat(dofs.cell_p, 4), (-sgn * flen).ravel(), (n_q, n_p))

    M_p = sp.diags(mesh.cell_area).tocsr()

    # --- essential normal flux
    flux_faces = [f for f in mesh.boundary_faces() if bc.flow[TAG_NAMES[int(mesh.face_tag[f])]] == "flux"]
    flux_dofs = dofs.face_q[np.array(flux_faces, dtype=np.int64)]
    if flux_dofs.size:
        keep = np.ones(n_q)
        keep[flux_dofs] = 0.0
        Kd = sp.diags(keep)
        diag = M_q_full.diagonal()
        M_q = (Kd @ M_q_full @ Kd + sp.diags((1.0 - keep) * diag)).tocsr()
        B = (Kd @ B_full).tocsr()
        M_q.eliminate_zeros()
        B.eliminate_zeros()
    else:
        M_q, B = M_q_full, B_full

    return SpatialOperators(A=A, M_q=M_q, B=B, E=E, M_p=M_p, penalty=float(penalty), biot_b=float(mat.biot_b),
                            inv_m=1.0 / mat.biot_m, k_dr=float(mat.k_dr), n_u=n_u, n_q=n_q, n_p=n_p, flux_dofs=flux_dofs,
                            M_q_full=M_q_full, B_full=B_full)


def _symmetrize(M: sp.csr_matrix) -> sp.csr_matrix:
    # exact symmetry up to summation order of duplicates
    S = (0.5 * (M + M.T)).tocsr()
    S.sort_indices()
    return S


def _local_flux_basis(xi, eta):
    """Outward unit-flux functions per slot (bottom, top, left, right), (4, nq, 2)."""
    z = np.zeros_like(xi)
    return np.array([
        np.stack([z, -(1 - eta)], -1),
        np.stack([z, eta], -1),
        np.stack([-(1 - xi), z], -1),
        np.stack([xi, z], -1),
    ])


# ------------------------------------------------------------------------ rhs

RHS_ORDER = 5


def _cell_points(mesh: Mesh, n: int = RHS_ORDER):
    xi, eta, w = _tensor_rule(n)
    o = mesh.cell_origin
    X = o[:, 0:1] + mesh.hx * xi[None, :]
    Y = o[:, 1:2] + mesh.hy * eta[None, :]
    return xi, eta, w * mesh.hx * mesh.hy, X, Y


def _face_points(mesh: Mesh, faces, n: int = RHS_ORDER):
    """Physical quadrature points on faces, oriented along +x / +y."""
    s, w = gauss01(n)
    c = mesh.face_center[faces]
    horiz = mesh.face_horizontal[faces]
    L = mesh.face_length[faces]
    off = (s - 0.5)[None, :] * L[:, None]
    X = c[:, 0:1] + np.where(horiz[:, None], off, 0.0)
    Y = c[:, 1:2] + np.where(horiz[:, None], 0.0, off)
    return s, w[None, :] * L[:, None], X, Y


def _vec(fn, X, Y, t):
    fx, fy = fn(X, Y, t)
    return np.broadcast_to(fx, X.shape), np.broadcast_to(fy, X.shape)


def assemble_source(mesh: Mesh, source: Callable | None, t: float) -> np.ndarray:
    """Cell integrals of the scalar source f."""
    if source is None:
        return np.zeros(mesh.n_cells)
    _, _, w, X, Y = _cell_points(mesh)
    return np.broadcast_to(source(X, Y, t), X.shape) @ w


def project_displacement(mesh: Mesh, dofs: DofMaps, fn: Callable | None, t: float = 0.0) -> np.ndarray:
    """Cellwise L2 projection of a vector field onto discontinuous Q1."""
    u = np.zeros(dofs.n_u)
    if fn is None:
        return u
    xi, eta, w, X, Y = _cell_points(mesh)
    vals, _ = vector_basis(xi, eta, mesh.hx, mesh.hy)
    Mloc = np.einsum("q,iqk,jqk->ij", w, vals, vals)
    fx, fy = _vec(fn, X, Y, t)
    F = np.stack([fx, fy], -1)
    rhs = np.einsum("q,iqk,cqk->ci", w, vals, F)
    u[dofs.cell_u] = np.linalg.solve(Mloc, rhs.T).T
    return u


def project_pressure(mesh: Mesh, fn: Callable | None, t: float = 0.0) -> np.ndarray:
    if fn is None:
        return np.zeros(mesh.n_cells)
    _, _, w, X, Y = _cell_points(mesh)
    return (np.broadcast_to(fn(X, Y, t), X.shape) @ w) / mesh.cell_area


def interpolate_flux(mesh: Mesh, dofs: DofMaps, fn: Callable | None, t: float = 0.0) -> np.ndarray:
    """Face-mean normal flux densities of a vector field (the RT0 interpolant)."""
    g = np.zeros(dofs.n_q)
    if fn is None:
        return g
    faces = np.arange(mesh.n_faces)
    _, wf, X, Y = _face_points(mesh, faces)
    fx, fy = _vec(fn, X, Y, t)
    n = mesh.face_normal
    g[dofs.face_q] = (np.sum(wf * fx, 1) * n[:, 0] + np.sum(wf * fy, 1) * n[:, 1]) / mesh.face_length
    return g


def initial_state(mesh: Mesh, dofs: DofMaps, mat: MaterialParameters):
    """Projected ``(u0, p0)`` coefficient vectors."""
    return project_displacement(mesh, dofs, mat.u0), project_pressure(mesh, mat.p0)


def assemble_rhs(mesh: Mesh, dofs: DofMaps, mat: MaterialParameters, loads: Loads, bc: BoundarySpec,
                 ops: SpatialOperators, t: float, initial=None):
    """Load vectors ``(b_u, b_q, b_p)`` at time ``t``.

    ``b_p`` carries the physical sign (cell integrals of the source, plus the
    lifted contribution of prescribed normal fluxes). The initial-state
    offsets of the momentum balance are folded into ``b_u``.
    """
    hx, hy = mesh.hx, mesh.hy
    lam, mu = mat.lambda_lame, mat.mu_lame
    b_u = np.zeros(dofs.n_u)
    b_q = np.zeros(dofs.n_q)
    b_p = assemble_source(mesh, loads.source, t)

    # body force
    xi, eta, w, X, Y = _cell_points(mesh)
    vals, _ = vector_basis(xi, eta, hx, hy)
    if loads.body_force is not None:
        fx, fy = _vec(loads.body_force, X, Y, t)
    else:
        fx = np.full(X.shape, mat.rho_b * mat.gravity[0])
        fy = np.full(X.shape, mat.rho_b * mat.gravity[1])
    if np.any(fx) or np.any(fy):
        F = np.stack([fx, fy], -1)
        np.add.at(b_u, dofs.cell_u, np.einsum("q,iqk,cqk->ci", w, vals, F))

    # Darcy gravity
    rg = mat.rho_f * np.asarray(mat.gravity)
    if np.any(rg):
        wl = _local_flux_basis(xi, eta)
        loc = np.einsum("q,aqk,k->a", w, wl, rg)
        np.add.at(b_q, dofs.cell_q, mesh.cell_face_sign * loc[None, :])

    # boundary data
    stiff = lam + 2.0 * mu
    for tag in BOUNDARY_TAGS:
        faces = mesh.boundary_faces(tag)
        normal = mesh.face_normal[faces[0]]
        slot = _TAG_SLOT[tag]
        s, wf, X, Y = _face_points(mesh, faces)
        cells = mesh.face_cells[faces, 0]
        vals_f, trac_f = _face_trace(slot, s, hx, hy, normal, lam, mu)
        P = bc.projector(tag, normal)
        if tag in loads.traction:
            tx, ty = _vec(loads.traction[tag], X, Y, t)
            T = np.stack([tx, ty], -1) @ (np.eye(2) - P).T
            np.add.at(b_u, dofs.cell_u[cells], np.einsum("fq,iqk,fqk->fi", wf, vals_f, T))
        if tag in loads.displacement and P.any():
            ux, uy = _vec(loads.displacement[tag], X, Y, t)
            U = np.stack([ux, uy], -1) @ P.T
            h_f = hy if tag in ("bottom", "top") else hx
            pen = ops.penalty * stiff / h_f
            contrib = -np.einsum("fq,iqk,fqk->fi", wf, trac_f, U) + pen * np.einsum("fq,iqk,fqk->fi", wf, vals_f, U)
            np.add.at(b_u, dofs.cell_u[cells], contrib)
        if bc.flow[tag] == "pressure" and tag in loads.pressure:
            pd = np.broadcast_to(loads.pressure[tag](X, Y, t), X.shape)
            b_q[dofs.face_q[faces]] -= np.sum(wf * pd, axis=1)

    # essential normal flux lifting
    if ops.flux_dofs.size:
        g = np.zeros(dofs.n_q)
        for tag, fn in loads.flux.items():
            if bc.flow[tag] != "flux":
                continue
            faces = mesh.boundary_faces(tag)
            s, wf, X, Y = _face_points(mesh, faces)
            gv = np.broadcast_to(fn(X, Y, t), X.shape)
            g[dofs.face_q[faces]] = np.sum(wf * gv, axis=1) / mesh.face_length[faces]
        if np.any(g):
            fixed = ops.flux_dofs
            b_q -= ops.M_q_full @ g
            b_p += ops.B_full.T @ g
            b_q[fixed] = ops.M_q_full.diagonal()[fixed] * g[fixed]
        else:
            b_q[ops.flux_dofs] = 0.0

    # initial-state offsets
    u0, p0 = initial if initial is not None else initial_state(mesh, dofs, mat)
    sv0 = np.broadcast_to(np.asarray(mat.sigma0_v, float), (mesh.n_cells,))
    if np.any(u0):
        b_u += ops.A @ u0
    if np.any(p0):
        b_u -= mat.biot_b * (ops.E @ p0)
    if np.any(sv0):
        b_u -= ops.E @ sv0
    return b_u, b_q, b_p


# ----------------------------------------------------------- post-processing


def cell_divergence(mesh: Mesh, dofs: DofMaps, u) -> np.ndarray:
    """Cell average of div u (volume part only, no face jumps)."""
    xi, eta, w = _tensor_rule(2)
    _, grads = vector_basis(xi, eta, mesh.hx, mesh.hy)
    div = np.einsum("q,iqkk->i", w, grads)
    return np.asarray(u)[..., dofs.cell_u] @ div


def volumetric_mean_stress(mesh: Mesh, dofs: DofMaps, u, p, mat: MaterialParameters, u0=None, p0=None):
    """Per-cell sigma_v = sigma_v0 + K_dr eps_v(u - u0) - b (p - p0)."""
    u = np.asarray(u, float)
    p = np.asarray(p, float)
    if u.shape[-1] != dofs.n_u or p.shape[-1] != dofs.n_p:
        raise AssemblyError(f"size mismatch: u {u.shape}, p {p.shape} for n_u={dofs.n_u}, n_p={dofs.n_p}")
    du = u - (0.0 if u0 is None else np.asarray(u0))
    dp = p - (0.0 if p0 is None else np.asarray(p0))
    sv0 = np.broadcast_to(np.asarray(mat.sigma0_v, float), (mesh.n_cells,))
    return sv0 + mat.k_dr * cell_divergence(mesh, dofs, du) - mat.biot_b * dp


def mass_balance_terms(state, ops: SpatialOperators, source):
    """Per-cell (storage change, net outward flux, source) integrated over one slab.

    ``state`` is a :class:`biotdg.coupling.SlabState`; ``source`` holds the
    cell integrals of f at the time nodes, shape (r+1, n_p).
    """
    w = state.weights
    storage = ops.biot_b * (ops.E.T @ (state.u[-1] - state.u_prev)) + ops.inv_m * (ops.M_p @ (state.p[-1] - state.p_prev))
    flux = -state.tau * (ops.B_full.T @ (w @ state.q))
    src = state.tau * (w @ np.asarray(source))
    return storage, flux, src


def local_mass_residual(state, ops: SpatialOperators, source) -> np.ndarray:
    storage, flux, src = mass_balance_terms(state, ops, source)
    return storage + flux - src

