"""Field evaluation and space-time error norms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import DofMaps, _cell_points, _local_flux_basis, vector_basis
from .mesh import Mesh
from .time_dg import lagrange_basis


@dataclass(frozen=True)
class CellQuadrature:
    """Physical points ``X, Y`` (nc, nq) and weights (nq,) with local basis tables."""

    X: np.ndarray
    Y: np.ndarray
    w: np.ndarray
    u_vals: np.ndarray  # (8, nq, 2)
    q_vals: np.ndarray  # (4, nq, 2), outward unit-flux functions


def cell_quadrature(mesh: Mesh, n: int = 5) -> CellQuadrature:
    xi, eta, w, X, Y = _cell_points(mesh, n)
    vals, _ = vector_basis(xi, eta, mesh.hx, mesh.hy)
    return CellQuadrature(X, Y, w, vals, _local_flux_basis(xi, eta))


def eval_displacement(dofs: DofMaps, quad: CellQuadrature, u) -> np.ndarray:
    """(nc, nq, 2) values of a dG Q1 displacement."""
    return np.einsum("ci,iqk->cqk", np.asarray(u)[dofs.cell_u], quad.u_vals)


def eval_flux(mesh: Mesh, dofs: DofMaps, quad: CellQuadrature, q) -> np.ndarray:
    """(nc, nq, 2) values of an RT0 flux; local basis scaled to unit flux density per face."""
    coef = mesh.cell_face_sign * np.asarray(q)[dofs.cell_q]
    return np.einsum("ca,aqk->cqk", coef, quad.q_vals)


def eval_pressure(dofs: DofMaps, quad: CellQuadrature, p) -> np.ndarray:
    return np.broadcast_to(np.asarray(p)[dofs.cell_p][:, None], quad.X.shape)


def _sq_err(vals, exact, w):
    e = vals - exact
    if e.ndim == 3:
        e = np.sum(e * e, axis=-1)
    else:
        e = e * e
    return float(np.sum(e @ w))


def _exact_vec(fn, X, Y, t):
    fx, fy = fn(X, Y, t)
    return np.stack([np.broadcast_to(fx, X.shape), np.broadcast_to(fy, X.shape)], -1)


def l2_errors(mesh: Mesh, dofs: DofMaps, quad: CellQuadrature, exact, t: float, u=None, q=None, p=None) -> dict:
    """Squared L2 errors at one time for the fields that are given."""
    out = {}
    if p is not None:
        ex = np.broadcast_to(exact.p(quad.X, quad.Y, t), quad.X.shape)
        out["p"] = _sq_err(eval_pressure(dofs, quad, p), ex, quad.w)
    if u is not None and exact.u is not None:
        out["u"] = _sq_err(eval_displacement(dofs, quad, u), _exact_vec(exact.u, quad.X, quad.Y, t), quad.w)
    if q is not None and exact.q is not None:
        out["q"] = _sq_err(eval_flux(mesh, dofs, quad, q), _exact_vec(exact.q, quad.X, quad.Y, t), quad.w)
    return out


def l2_error_at_end(traj, exact=None) -> dict:
    """L2 errors of the final end trace against the exact solution at T."""
    disc = traj.disc
    exact = exact or disc.problem.exact
    quad = cell_quadrature(disc.mesh)
    st = traj.final
    sq = l2_errors(disc.mesh, disc.dofs, quad, exact, st.t0 + st.tau, st.u[-1], st.q[-1], st.p[-1])
    return {k: np.sqrt(v) for k, v in sq.items()}


def l2l2_errors(traj, exact=None, n_time: int | None = None) -> dict:
    """L2(0,T; L2) errors of the slab polynomials, Gauss quadrature in time."""
    disc = traj.disc
    exact = exact or disc.problem.exact
    quad = cell_quadrature(disc.mesh)
    n_time = n_time or max(traj.r + 3, 4)
    s, w = np.polynomial.legendre.leggauss(n_time)
    s, w = 0.5 * (s + 1.0), 0.5 * w
    total: dict = {}
    for st in traj.states:
        val, _ = lagrange_basis(st.nodes, s)
        U, Q, P = (val.T @ a for a in (st.u, st.q, st.p))
        for g in range(n_time):
            t = st.t0 + st.tau * s[g]
            for k, v in l2_errors(disc.mesh, disc.dofs, quad, exact, t, U[g], Q[g], P[g]).items():
                total[k] = total.get(k, 0.0) + st.tau * w[g] * v
    return {k: np.sqrt(v) for k, v in total.items()}


def observed_orders(errors, sizes) -> np.ndarray:
    """log2-type rates between consecutive levels: log(e_i / e_{i+1}) / log(h_i / h_{i+1})."""
    e = np.asarray(errors, float)
    h = np.asarray(sizes, float)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def node_displacement(mesh: Mesh, dofs: DofMaps, u) -> np.ndarray:
    """Vertex displacements averaged over the cells sharing each vertex, (n_nodes, 2)."""
    nx, ny = mesh.nx, mesh.ny
    acc = np.zeros(((nx + 1) * (ny + 1), 2))
    cnt = np.zeros((nx + 1) * (ny + 1))
    U = np.asarray(u)[dofs.cell_u].reshape(-1, 2, 4)  # (nc, comp, node)
    c = np.arange(mesh.n_cells)
    i, j = c % nx, c // nx
    for node, (di, dj) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
        g = (i + di) + (nx + 1) * (j + dj)
        np.add.at(acc, g, U[:, :, node])
        np.add.at(cnt, g, 1.0)
    return acc / cnt[:, None]


def cell_flux_vectors(mesh: Mesh, dofs: DofMaps, q) -> np.ndarray:
    """Flux vector at each cell center, (nc, 2)."""
    quad_c = _local_flux_basis(np.array([0.5]), np.array([0.5]))[:, 0, :]
    coef = mesh.cell_face_sign * np.asarray(q)[dofs.cell_q]
    return coef @ quad_c


def _slab_values(traj, t: float):
    """(u, q, p) of a trajectory at time t, taken from the slab containing t."""
    tp = traj.partition.t_points
    n = int(np.clip(np.searchsorted(tp, t, side="left"), 1, len(tp) - 1))
    st = traj.states[n - 1]
    val, _ = lagrange_basis(st.nodes, [(t - st.t0) / st.tau])
    v = val[:, 0]
    return v @ st.u, v @ st.q, v @ st.p


def l2l2_difference(traj, reference, n_time: int | None = None) -> dict:
    """L2(0,T; L2) distance between two trajectories on the same mesh.

    Used to isolate the temporal error against a much finer time
    discretization. Quadrature follows the slabs of ``traj``; the reference
    partition should nest inside it so its polynomials are smooth on each
    quadrature slab.
    """
    disc = traj.disc
    quad = cell_quadrature(disc.mesh)
    n_time = n_time or max(traj.r + 3, 4)
    s, w = np.polynomial.legendre.leggauss(n_time)
    s, w = 0.5 * (s + 1.0), 0.5 * w
    total = {"u": 0.0, "q": 0.0, "p": 0.0}
    for st in traj.states:
        val, _ = lagrange_basis(st.nodes, s)
        U, Q, P = (val.T @ a for a in (st.u, st.q, st.p))
        for g in range(n_time):
            ru, rq, rp = _slab_values(reference, st.t0 + st.tau * s[g])
            wt = st.tau * w[g]
            total["u"] += wt * _sq_err(eval_displacement(disc.dofs, quad, U[g] - ru), 0.0, quad.w)
            total["q"] += wt * _sq_err(eval_flux(disc.mesh, disc.dofs, quad, Q[g] - rq), 0.0, quad.w)
            total["p"] += wt * _sq_err(eval_pressure(disc.dofs, quad, P[g] - rp), 0.0, quad.w)
    return {k: np.sqrt(v) for k, v in total.items()}
