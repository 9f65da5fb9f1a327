"""Run and convergence-study drivers behind the command line."""
from __future__ import annotations

import os
import sys
from pathlib import Path

from .config import RunConfig, build_material
from .coupling import FixedStressConfig, SolverConfig, SolverFailure, discretize, march
from .output import write_csv_convergence, write_iterlog, write_vtk
from .postprocess import l2l2_errors
from .problems import ProblemError, get_problem
from .time_dg import TimePartition

OUTPUT_ENV = "BIOTDG_OUTPUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 2  # argparse
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_SOLVER = 5


class OutputError(OSError):
    pass


def build_problem(cfg: RunConfig, nx: int | None = None, ny: int | None = None):
    kw = {"material": build_material(cfg)}
    nx = nx if nx is not None else cfg.nx
    ny = ny if ny is not None else cfg.ny
    if nx is not None:
        kw["nx"] = nx
    if ny is not None:
        kw["ny"] = ny
    if cfg.problem == "terzaghi":
        kw["load"] = cfg.load
    else:
        kw["profile"] = cfg.time_profile
    if cfg.T is not None:
        kw["T"] = cfg.T
    elif cfg.tau is not None and cfg.n_slabs is not None:
        kw["T"] = cfg.tau * cfg.n_slabs
    return get_problem(cfg.problem, **kw)


def solver_config(cfg: RunConfig) -> SolverConfig:
    fs = FixedStressConfig(stab=cfg.fs_stab, tol=cfg.fs_tol, max_sweeps=cfg.fs_max_sweeps,
                           truncation_sweeps=cfg.fs_sweeps)
    return SolverConfig(block_solver=cfg.block_solver, tol=cfg.tol, restart=cfg.restart, max_iter=cfg.max_iter, fs=fs)


def output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def prepare_output(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {path} is not writable: {exc}") from exc
    return path


def slab_line(n: int, t_n: float, method: str, reports) -> str:
    its = "/".join(str(rep.iterations) for rep in reports)
    res = max(rep.final_relative_residual for rep in reports)
    return f"slab {n:5d}  t_n = {t_n:.6e}  method = {method}  iterations = {its}  residual = {res:.3e}"


def run(cfg: RunConfig, stream=None) -> int:
    """Execute one time march and write the requested outputs."""
    stream = stream or sys.stdout
    problem = build_problem(cfg)
    partition = cfg.partition(problem.T)
    outdir = output_dir(cfg)
    writes = cfg.write_vtk or cfg.write_csv or cfg.write_iterlog
    if writes:
        prepare_output(outdir)
    disc = discretize(problem, cfg.penalty)

    def report(n, state, reports):
        print(slab_line(n, state.t0 + state.tau, cfg.method, reports), file=stream)
        if cfg.write_vtk:
            _guard(write_vtk, disc.mesh, state, outdir / f"state_{n:05d}.vtk", problem.material, disc.reference,
                   f"{problem.name} t = {state.t0 + state.tau:.17g}")

    try:
        traj = march(problem, partition, cfg.r, cfg.method, solver_config(cfg), cfg.penalty, disc=disc,
                     callback=report)
    except SolverFailure as exc:
        print(f"error: solver failure in slab {exc.slab_index}, block {exc.block_index}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if cfg.write_iterlog:
        _guard(write_iterlog, partition, traj.reports, outdir / "iterations.csv")
    if cfg.write_csv:
        _guard(_write_summary, traj, outdir / "summary.csv")
    return EXIT_OK


def _guard(fn, *args):
    try:
        fn(*args)
    except OSError as exc:
        raise OutputError(str(exc)) from exc


def _write_summary(traj, path):
    """Per-slab end values: time, pressure extrema and mean."""
    lines = ["slab_index,t_n,p_min,p_max,p_mean"]
    area = traj.disc.mesh.cell_area
    for n, st in enumerate(traj.states, start=1):
        p = st.p[-1]
        mean = float(area @ p / area.sum())
        lines.append(",".join([str(n)] + ["%.17g" % v for v in (st.t0 + st.tau, p.min(), p.max(), mean)]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def convergence_rows(cfg: RunConfig, stream=None):
    """Errors for ``cfg.levels`` refinements of the configured run."""
    stream = stream or sys.stdout
    base = build_problem(cfg)
    if base.exact is None:
        raise ProblemError(f"problem {cfg.problem!r} has no exact solution")
    part0 = cfg.partition(base.T)
    rows = []
    for level in range(cfg.levels):
        fs = 2 ** level if cfg.refine_in in ("space", "both") else 1
        ft = 2 ** level if cfg.refine_in in ("time", "both") else 1
        pb = build_problem(cfg, base.nx * fs, base.ny * fs)
        part = TimePartition.uniform(part0.T, part0.n_slabs * ft)
        traj = march(pb, part, cfg.r, cfg.method, solver_config(cfg), cfg.penalty)
        err = l2l2_errors(traj)
        h = max(pb.lx / pb.nx, pb.ly / pb.ny)
        rows.append((h, float(part.taus[0]), cfg.r, err.get("p"), err.get("u"), err.get("q")))
        shown = "  ".join(f"{k} = {v:.4e}" for k, v in sorted(err.items()))
        print(f"level {level}  h = {h:.4e}  tau = {part.taus[0]:.4e}  {shown}", file=stream)
    return rows


def converge(cfg: RunConfig, stream=None) -> int:
    outdir = output_dir(cfg)
    if cfg.write_csv:
        prepare_output(outdir)
    try:
        rows = convergence_rows(cfg, stream)
    except SolverFailure as exc:
        print(f"error: solver failure in slab {exc.slab_index}, block {exc.block_index}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if cfg.write_csv:
        _guard(write_csv_convergence, rows, outdir / "convergence.csv")
    return EXIT_OK
