"""CSV and legacy ASCII VTK writers."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .assembly import MaterialParameters, build_dof_maps, volumetric_mean_stress
from .mesh import Mesh
from .postprocess import cell_flux_vectors, node_displacement

VTK_HEADER = "# vtk DataFile Version 3.0"

ITERLOG_COLUMNS = ("slab_index", "t_n", "block_index", "block_type", "gmres_iterations", "fs_sweeps",
                   "final_residual")
CONVERGENCE_COLUMNS = ("h", "tau", "r", "error_p_L2L2", "error_u_L2L2", "error_q_L2L2",
                       "order_p", "order_u", "order_q")


def _num(x) -> str:
    return "%.17g" % float(x)


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_vtk(mesh: Mesh, state, path, material: MaterialParameters | None = None, reference=None,
              title: str = "biotdg state"):
    """Legacy ASCII structured-grid file with pressure, sigma_v, flux and displacement.

    ``state`` is anything with ``u``, ``q``, ``p`` coefficient vectors; a
    slab state contributes its end trace. ``reference`` is the (u0, p0) pair
    that sigma_v is measured from.
    """
    u, q, p = state.end_trace if hasattr(state, "end_trace") else (state.u, state.q, state.p)
    dofs = build_dof_maps(mesh)
    mat = material or MaterialParameters()
    u0, p0 = reference if reference is not None else (None, None)
    sigma_v = volumetric_mean_stress(mesh, dofs, u, p, mat, u0, p0)
    disp = node_displacement(mesh, dofs, u)
    flux = cell_flux_vectors(mesh, dofs, q)
    pts = mesh.node_coordinates()

    out = io.StringIO()
    w = out.write
    w(VTK_HEADER + "\n")
    w(title.replace("\n", " ")[:255] + "\n")
    w("ASCII\nDATASET STRUCTURED_GRID\n")
    w(f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1\n")
    w(f"POINTS {len(pts)} double\n")
    for x, y in pts:
        w(f"{_num(x)} {_num(y)} 0\n")
    w(f"CELL_DATA {mesh.n_cells}\n")
    w("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
    w("".join(_num(v) + "\n" for v in p))
    w("SCALARS sigma_v double 1\nLOOKUP_TABLE default\n")
    w("".join(_num(v) + "\n" for v in sigma_v))
    w("VECTORS flux double\n")
    w("".join(f"{_num(a)} {_num(b)} 0\n" for a, b in flux))
    w(f"POINT_DATA {len(pts)}\n")
    w("VECTORS displacement double\n")
    w("".join(f"{_num(a)} {_num(b)} 0\n" for a, b in disp))
    _write_text(path, out.getvalue())


def read_vtk_array(path, name: str) -> np.ndarray:
    """Read one named SCALARS or VECTORS array back from a file written by :func:`write_vtk`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    section = None
    for i, line in enumerate(lines):
        tok = line.split()
        if tok and tok[0] in ("CELL_DATA", "POINT_DATA"):
            section = int(tok[1])
        if len(tok) >= 2 and tok[0] in ("SCALARS", "VECTORS") and tok[1] == name:
            start = i + (2 if tok[0] == "SCALARS" else 1)
            rows = [list(map(float, s.split())) for s in lines[start:start + section]]
            arr = np.array(rows)
            return arr[:, 0] if tok[0] == "SCALARS" else arr[:, :2]
    raise KeyError(f"array {name!r} not found in {path}")


def iterlog_rows(partition, reports):
    """One row per (slab, diagonal block)."""
    for n, slab_reports in enumerate(reports, start=1):
        t_n = partition.t_points[n]
        for rep in slab_reports:
            yield (n, _num(t_n), rep.block_index, rep.block_type, rep.iterations if rep.kind == "gmres" else 0,
                   rep.sweeps, "%.6e" % rep.final_relative_residual)


def write_iterlog(partition, reports, path):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(ITERLOG_COLUMNS)
    wr.writerows(iterlog_rows(partition, reports))
    _write_text(path, buf.getvalue())


def convergence_orders(errors) -> list:
    """log2 of consecutive error ratios; None on the first row or when undefined."""
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        ok = a is not None and b is not None and a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b)
        out.append(float(np.log2(a / b)) if ok else None)
    return out


def write_csv_convergence(rows, path):
    """``rows`` hold (h, tau, r, error_p, error_u, error_q); errors may be None."""
    rows = list(rows)
    if not rows:
        raise ValueError("a convergence table needs at least one row")
    orders = [convergence_orders([row[3 + k] for row in rows]) for k in range(3)]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CONVERGENCE_COLUMNS)
    for i, (h, tau, r, ep, eu, eq) in enumerate(rows):
        errs = ["" if e is None else "%.10e" % e for e in (ep, eu, eq)]
        ords = ["" if o[i] is None else "%.3f" % o[i] for o in orders]
        wr.writerow([_num(h), _num(tau), int(r), *errs, *ords])
    _write_text(path, buf.getvalue())
