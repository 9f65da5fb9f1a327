"""Plain ``key = value`` run configuration with line-precise errors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .assembly import AssemblyError
from .problems import PRESETS, ProblemError, material_from_config
from .time_dg import MAX_DEGREE, TimePartition

METHODS = ("monolithic-spectral", "fixed-stress")
BLOCK_SOLVERS = ("direct", "gmres")
REFINE_MODES = ("space", "time", "both")
MATERIAL_KEYS = ("lambda", "mu", "k", "eta", "b", "m", "k_s", "rho_b", "rho_f", "gravity")

# relative slack when checking tau * n_slabs against T
_TIME_RTOL = 1e-9


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass
class RunConfig:
    problem: str = "terzaghi"
    nx: int | None = None
    ny: int | None = None
    r: int = 0
    tau: float | None = None
    n_slabs: int | None = None
    T: float | None = None
    method: str = "monolithic-spectral"
    block_solver: str = "gmres"
    tol: float = 1e-8
    restart: int = 100
    max_iter: int = 500
    fs_sweeps: int = 1
    fs_stab: float | None = None
    fs_tol: float = 1e-10
    fs_max_sweeps: int = 500
    penalty: float = 10.0
    load: float = 1.0
    time_profile: str = "sin"
    output_dir: str = "biotdg-output"
    write_vtk: bool = False
    write_csv: bool = True
    write_iterlog: bool = True
    levels: int = 3
    refine_in: str = "time"
    material: dict = field(default_factory=dict)

    def partition(self, default_T: float) -> TimePartition:
        """Uniform partition from whichever of tau, n_slabs, T were given."""
        T = self.T if self.T is not None else (
            self.tau * self.n_slabs if self.tau is not None and self.n_slabs is not None else default_T)
        if self.n_slabs is not None:
            n = self.n_slabs
        elif self.tau is not None:
            n = _slab_count(T, self.tau)
            if n is None:
                raise ConfigError(f"end time T = {T!r} is not a whole multiple of tau = {self.tau!r}", key="tau")
        else:
            n = 20
        return TimePartition.uniform(T, n)


def _slab_count(T, tau):
    n = max(1, round(T / tau))
    return n if math.isclose(n * tau, T, rel_tol=_TIME_RTOL) else None


# key -> (parser, documentation); None default means "problem default"
def _int(s):
    return int(s, 10)


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not a finite number")
    return v


def _bool(s):
    t = s.lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def _choice(options):
    def parse(s):
        t = s.lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _profile(s):
    t = s.lower()
    if t in ("sin", "linear") or (t.startswith("poly:") and t[5:].isdigit()):
        return t
    raise ValueError("expected sin, linear or poly:<degree>")


def _optional_float(s):
    return None if s.lower() in ("default", "none") else _float(s)


def _gravity(s):
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated components")
    return tuple(_float(p) for p in parts)


KEYS = {
    "problem": (_choice(PRESETS), "benchmark preset: terzaghi, ms1 or ms1-gravity"),
    "nx": (_int, "cells along x (default: problem preset)"),
    "ny": (_int, "cells along y (default: problem preset)"),
    "r": (_int, f"dG time degree, 0..{MAX_DEGREE}"),
    "tau": (_float, "slab length; any two of tau, n_slabs, T must agree"),
    "n_slabs": (_int, "number of slabs"),
    "T": (_float, "end time (default: problem preset)"),
    "method": (_choice(METHODS), "monolithic-spectral or fixed-stress"),
    "block_solver": (_choice(BLOCK_SOLVERS), "diagonal blocks: direct or gmres (fixed-stress preconditioned)"),
    "tol": (_float, "GMRES relative tolerance"),
    "restart": (_int, "GMRES restart length"),
    "max_iter": (_int, "GMRES iteration cap per block"),
    "fs_sweeps": (_int, "fixed-stress sweeps per preconditioner application"),
    "fs_stab": (_optional_float, "fixed-stress stabilization (default b^2/K_dr)"),
    "fs_tol": (_float, "fixed-stress iteration tolerance"),
    "fs_max_sweeps": (_int, "fixed-stress sweep cap"),
    "penalty": (_float, "interior penalty coefficient gamma"),
    "load": (_float, "terzaghi: applied top load"),
    "time_profile": (_profile, "ms1: s(t) profile, sin, linear or poly:<degree>"),
    "output_dir": (str, "output directory (overridden by BIOTDG_OUTPUT_DIR)"),
    "write_vtk": (_bool, "write legacy VTK files per slab"),
    "write_csv": (_bool, "write CSV summaries"),
    "write_iterlog": (_bool, "write the per-block iteration log"),
    "levels": (_int, "converge: number of refinement levels"),
    "refine_in": (_choice(REFINE_MODES), "converge: space, time or both"),
    "lambda": (_float, "material: Lame lambda"),
    "mu": (_float, "material: Lame mu"),
    "k": (_float, "material: permeability"),
    "eta": (_float, "material: fluid viscosity"),
    "b": (_float, "material: Biot coefficient"),
    "m": (_float, "material: Biot modulus M"),
    "k_s": (_float, "material: grain bulk modulus (sets b = 1 - K_dr/K_s)"),
    "rho_b": (_float, "material: bulk density"),
    "rho_f": (_float, "material: fluid density"),
    "gravity": (_gravity, "material: gravity vector 'gx, gy'"),
}


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno, key)
        if not val:
            raise ConfigError(f"missing value for {key!r}", lineno, key)
        parser, _ = KEYS[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {key} = {val!r}: {exc}", lineno, key) from None
        lines[key] = lineno
    cfg = RunConfig()
    for key, val in values.items():
        if key in MATERIAL_KEYS:
            cfg.material[key] = val
        else:
            setattr(cfg, key, val)
    _validate(cfg, lines)
    return cfg


def _check(cond, msg, key, lines):
    if not cond:
        raise ConfigError(f"{key}: {msg}", lines.get(key), key)


def _validate(cfg: RunConfig, lines: dict):
    _check(0 <= cfg.r <= MAX_DEGREE, f"r must lie in [0, {MAX_DEGREE}], got {cfg.r}", "r", lines)
    for key in ("nx", "ny", "n_slabs"):
        v = getattr(cfg, key)
        _check(v is None or v >= 1, f"must be >= 1, got {v}", key, lines)
    for key in ("tau", "T", "tol", "fs_tol", "penalty"):
        v = getattr(cfg, key)
        _check(v is None or v > 0, f"must be positive, got {v}", key, lines)
    _check(cfg.tol < 1, "must be < 1", "tol", lines)
    _check(cfg.fs_tol < 1, "must be < 1", "fs_tol", lines)
    for key in ("restart", "max_iter", "fs_sweeps", "fs_max_sweeps", "levels"):
        v = getattr(cfg, key)
        _check(v >= 1, f"must be >= 1, got {v}", key, lines)
    _check(cfg.fs_stab is None or cfg.fs_stab > 0, f"must be positive, got {cfg.fs_stab}", "fs_stab", lines)
    if cfg.tau is not None and cfg.n_slabs is not None and cfg.T is not None:
        last = max(lines["tau"], lines["n_slabs"], lines["T"])
        if not math.isclose(cfg.tau * cfg.n_slabs, cfg.T, rel_tol=_TIME_RTOL):
            raise ConfigError(f"tau * n_slabs = {cfg.tau!r} * {cfg.n_slabs} != T = {cfg.T!r}", last, "T")
    elif cfg.tau is not None and cfg.T is not None:
        if _slab_count(cfg.T, cfg.tau) is None:
            raise ConfigError(f"T = {cfg.T!r} is not a whole multiple of tau = {cfg.tau!r}",
                              max(lines["tau"], lines["T"]), "T")
    if cfg.material:
        try:
            build_material(cfg)
        except (ProblemError, AssemblyError) as exc:
            msg = str(exc).lower()
            key = next((k for k in cfg.material if any(t in msg for t in _MATERIAL_TOKENS[k])), None)
            key = key or max(cfg.material, key=lines.get)
            raise ConfigError(f"invalid material: {exc}", lines.get(key), key) from None


_MATERIAL_TOKENS = {
    "lambda": ("lambda",), "mu": ("mu_lame",), "k": ("k_perm", "permeab"), "eta": ("eta",),
    "b": ("biot_b", "biot coefficient"), "m": ("biot_m", "modulus m"), "k_s": ("k_s",),
    "rho_b": ("rho_b",), "rho_f": ("rho_f",), "gravity": ("gravity",),
}


def material_defaults(problem: str) -> dict:
    base = {"lambda": 1.0, "mu": 1.0, "k": 1.0, "eta": 1.0, "b": 0.8, "m": 10.0}
    if problem == "ms1-gravity":
        base.update(rho_f=1.0, rho_b=2.0, gravity=(0.0, -1.0))
    return base


def build_material(cfg: RunConfig):
    raw = material_defaults(cfg.problem)
    if "k_s" in cfg.material and "b" not in cfg.material:
        raw.pop("b")
    raw.update(cfg.material)
    return material_from_config(raw)


def default_config_text() -> str:
    """Every key with its default, in a form :func:`parse_config` accepts."""
    cfg = RunConfig()
    mat = material_defaults(cfg.problem)
    out = ["# biotdg run configuration; '#' starts a comment, unknown keys are errors"]
    for key, (_, doc) in KEYS.items():
        if key in MATERIAL_KEYS:
            val = mat.get(key)
        else:
            val = getattr(cfg, key)
        if val is None:
            out.append(f"# {key} =   # {doc}")
            continue
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, tuple):
            val = ", ".join(repr(v) for v in val)
        out.append(f"{key} = {val}   # {doc}")
    return "\n".join(out) + "\n"
