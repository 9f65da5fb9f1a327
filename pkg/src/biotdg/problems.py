"""Benchmark problems: Terzaghi consolidation and manufactured solutions."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import sympy

from .assembly import AssemblyError, BoundarySpec, Loads, MaterialParameters

PRESETS = ("terzaghi", "ms1", "ms1-gravity")


class ProblemError(ValueError):
    pass


@dataclass
class ExactSolution:
    p: Callable
    u: Callable | None = None
    q: Callable | None = None


@dataclass
class ProblemSpec:
    name: str
    nx: int
    ny: int
    lx: float
    ly: float
    material: MaterialParameters
    bc: BoundarySpec
    loads: Loads
    T: float
    exact: ExactSolution | None = None
    info: dict = field(default_factory=dict)
    # initial condition for time marching; defaults to the reference state u0, p0
    initial_u: Callable | None = None
    initial_p: Callable | None = None
    # "l2": cellwise projections of initial_u, initial_p; "elliptic": pressure
    # from the mixed Darcy problem with flux initial_q, displacement in
    # discrete equilibrium with it (no spurious initial layer)
    initial_projection: str = "l2"
    initial_q: Callable | None = None

    def __post_init__(self):
        if self.initial_projection not in ("l2", "elliptic"):
            raise ProblemError(f"initial_projection must be 'l2' or 'elliptic', got {self.initial_projection!r}")
        if self.initial_projection == "elliptic" and self.initial_q is None:
            raise ProblemError("elliptic initial projection needs initial_q")

    def with_mesh(self, nx: int, ny: int) -> "ProblemSpec":
        return replace(self, nx=nx, ny=ny)


def desk_material(**overrides) -> MaterialParameters:
    """lambda = mu = 1, k/eta = 1, M = 10, b = 0.8, no gravity."""
    base = dict(lambda_lame=1.0, mu_lame=1.0, k_perm=1.0, eta=1.0, biot_b=0.8, biot_m=10.0)
    base.update(overrides)
    return MaterialParameters(**base)


_MATERIAL_KEYS = {
    "lambda": "lambda_lame", "lambda_lame": "lambda_lame",
    "mu": "mu_lame", "mu_lame": "mu_lame",
    "k": "k_perm", "k_perm": "k_perm",
    "eta": "eta",
    "b": "biot_b", "biot_b": "biot_b",
    "m": "biot_m", "biot_m": "biot_m",
    "k_s": "k_s", "k_dr": "k_dr",
    "rho_b": "rho_b", "rho_f": "rho_f",
    "gravity": "gravity", "sigma0_v": "sigma0_v",
}


def material_from_config(raw: Mapping) -> MaterialParameters:
    """Build material parameters from loose key/value data.

    Either ``b`` or ``k_s`` must be given; ``k_dr`` is always derived from
    the Lame parameters (a supplied value is checked against it).
    """
    kw = {}
    for key, val in raw.items():
        name = _MATERIAL_KEYS.get(key.lower())
        if name is None:
            raise ProblemError(f"unknown material key {key!r}")
        kw[name] = val
    for name in ("lambda_lame", "mu_lame", "k_perm", "eta", "biot_m", "k_s"):
        if name in kw and np.any(np.asarray(kw[name]) < 0):
            raise ProblemError(f"{name} must be non-negative, got {kw[name]}")
    if "biot_b" not in kw and "k_s" not in kw:
        raise ProblemError("either b or k_s is required")
    if "biot_b" not in kw:
        kw["biot_b"] = None
    if kw.get("biot_m", 1.0) <= 0:
        raise ProblemError(f"Biot modulus M must be positive, got {kw['biot_m']}")
    try:
        mat = MaterialParameters(**kw)
    except AssemblyError as exc:
        raise ProblemError(str(exc)) from exc
    if not 0.0 < mat.biot_b <= 1.0:
        raise ProblemError(f"Biot coefficient must lie in (0, 1], got {mat.biot_b}")
    return mat


# ------------------------------------------------------------------- Terzaghi


@dataclass(frozen=True)
class TerzaghiParams:
    height: float
    load: float
    material: MaterialParameters

    @property
    def k_c(self) -> float:
        return self.material.constrained_modulus

    @property
    def storage(self) -> float:
        m = self.material
        return 1.0 / m.biot_m + m.biot_b ** 2 / self.k_c

    @property
    def c_v(self) -> float:
        m = self.material
        return (float(np.mean(m.k_perm)) / m.eta) / self.storage

    @property
    def p_initial(self) -> float:
        # undrained response to the applied load
        return self.material.biot_b * self.load / (self.k_c * self.storage)

    def time_for(self, normalized: float) -> float:
        """Time at which c_v t / H^2 equals ``normalized``."""
        return normalized * self.height ** 2 / self.c_v


def terzaghi_pressure(z, t: float, params: TerzaghiParams, n_terms: int = 200):
    """Series pressure at depth ``z`` (drained top z=0, impermeable base z=H)."""
    if not t > 0:
        raise ProblemError(f"Terzaghi series needs t > 0, got {t}")
    if n_terms < 1:
        raise ProblemError("n_terms must be >= 1")
    z = np.asarray(z, dtype=float)
    H, cv = params.height, params.c_v
    m = 2 * np.arange(n_terms) + 1.0
    shape = z.shape
    zf = z.reshape(-1, 1)
    terms = np.sin(m * np.pi * zf / (2 * H)) * np.exp(-m ** 2 * np.pi ** 2 * cv * t / (4 * H ** 2)) / m
    return (params.p_initial * 4.0 / np.pi * terms.sum(axis=1)).reshape(shape)


def terzaghi(nx: int = 1, ny: int = 32, material: MaterialParameters | None = None, load: float = 1.0,
             height: float = 1.0, width: float | None = None, T: float | None = None) -> ProblemSpec:
    """Loaded column with drained top, rollers on the sides and base."""
    mat = material or desk_material()
    params = TerzaghiParams(height, load, mat)
    width = height if width is None else width
    bc = BoundarySpec(
        mechanics={"left": "roller", "right": "roller", "bottom": "roller", "top": "traction"},
        flow={"left": "flux", "right": "flux", "bottom": "flux", "top": "pressure"},
    )
    loads = Loads(
        traction={"top": lambda x, y, t: (0.0, -load)},
        pressure={"top": lambda x, y, t: 0.0},
    )
    exact = ExactSolution(p=lambda x, y, t: terzaghi_pressure(height - np.asarray(y), t, params))
    if T is None:
        T = params.time_for(0.1)
    return ProblemSpec("terzaghi", nx, ny, width, height, mat, bc, loads, T, exact, {"terzaghi": params})


# --------------------------------------------------------- manufactured (MS1)

_x, _y, _t = sympy.symbols("x y t", real=True)


def _profile(kind: str):
    if kind == "linear":
        return 1 + _t
    if kind == "sin":
        return sympy.sin(_t) + 2
    if kind.startswith("poly:"):
        deg = int(kind.split(":", 1)[1])
        return sum(_t ** k for k in range(deg + 1))
    raise ProblemError(f"unknown time profile {kind!r}; use linear, sin or poly:<degree>")


def _lam(expr):
    f = sympy.lambdify((_x, _y, _t), expr, modules="numpy")

    def call(x, y, t):
        x = np.asarray(x, float)
        return np.broadcast_to(f(x, np.asarray(y, float), t), np.broadcast(x, np.asarray(y)).shape).astype(float)

    return call


@dataclass(frozen=True)
class ManufacturedFields:
    p: Callable
    u: Callable
    q: Callable
    source: Callable
    body_force: Callable
    pressure_bc: Callable


@lru_cache(maxsize=32)
def _ms1_fields(lam, mu, k, eta, b, M, rho_f, gx, gy, profile):
    s = _profile(profile)
    pi = sympy.pi
    p = sympy.cos(pi * _x) * sympy.cos(pi * _y) * s
    ux = sympy.sin(pi * _x) * sympy.sin(pi * _y) * s / 10
    uy = ux
    mob = sympy.Rational(1) * k / eta
    qx = -mob * (sympy.diff(p, _x) - rho_f * gx)
    qy = -mob * (sympy.diff(p, _y) - rho_f * gy)
    exx, eyy = sympy.diff(ux, _x), sympy.diff(uy, _y)
    exy = (sympy.diff(ux, _y) + sympy.diff(uy, _x)) / 2
    tr = exx + eyy
    sxx = 2 * mu * exx + lam * tr - b * p
    syy = 2 * mu * eyy + lam * tr - b * p
    sxy = 2 * mu * exy
    fx = -(sympy.diff(sxx, _x) + sympy.diff(sxy, _y))
    fy = -(sympy.diff(sxy, _x) + sympy.diff(syy, _y))
    src = b * sympy.diff(tr, _t) + sympy.diff(p, _t) / M + sympy.diff(qx, _x) + sympy.diff(qy, _y)
    P, UX, UY, QX, QY, F, FX, FY = (_lam(e) for e in (p, ux, uy, qx, qy, src, fx, fy))
    return ManufacturedFields(
        p=P,
        u=lambda x, y, t: (UX(x, y, t), UY(x, y, t)),
        q=lambda x, y, t: (QX(x, y, t), QY(x, y, t)),
        source=F,
        body_force=lambda x, y, t: (FX(x, y, t), FY(x, y, t)),
        pressure_bc=P,
    )


def manufactured_fields(case_id: str, mat: MaterialParameters, profile: str = "sin") -> ManufacturedFields:
    if case_id not in ("ms1", "ms1-gravity"):
        raise ProblemError(f"unknown manufactured case {case_id!r}")
    if np.ndim(mat.k_perm) != 0:
        raise ProblemError("manufactured cases need a scalar permeability")
    return _ms1_fields(mat.lambda_lame, mat.mu_lame, float(mat.k_perm), mat.eta, mat.biot_b, mat.biot_m,
                       mat.rho_f, mat.gravity[0], mat.gravity[1], profile)


def manufactured_source(case_id: str, mat: MaterialParameters, x, t, profile: str = "sin") -> dict:
    """Sources and exact fields of a manufactured case at points ``x`` (shape (..., 2))."""
    f = manufactured_fields(case_id, mat, profile)
    x = np.asarray(x, float)
    X, Y = x[..., 0], x[..., 1]
    return {
        "f": f.source(X, Y, t),
        "body_force": np.stack(f.body_force(X, Y, t), -1),
        "pressure_bc": f.pressure_bc(X, Y, t),
        "p": f.p(X, Y, t),
        "u": np.stack(f.u(X, Y, t), -1),
        "q": np.stack(f.q(X, Y, t), -1),
    }


def ms1(nx: int = 8, ny: int = 8, material: MaterialParameters | None = None, T: float = 1.0,
        profile: str = "sin", gravity: bool = False) -> ProblemSpec:
    """Unit square, clamped displacement, prescribed pressure on all sides."""
    if material is None:
        material = desk_material(rho_f=1.0, rho_b=2.0, gravity=(0.0, -1.0)) if gravity else desk_material()
    name = "ms1-gravity" if gravity else "ms1"
    f = manufactured_fields(name, material, profile)
    bc = BoundarySpec(
        mechanics={t: "fixed" for t in ("left", "right", "bottom", "top")},
        flow={t: "pressure" for t in ("left", "right", "bottom", "top")},
    )
    loads = Loads(body_force=f.body_force, source=f.source,
                  pressure={t: f.pressure_bc for t in ("left", "right", "bottom", "top")})
    return ProblemSpec(name, nx, ny, 1.0, 1.0, material, bc, loads, T, ExactSolution(f.p, f.u, f.q),
                       {"profile": profile},
                       initial_u=lambda x, y, t: f.u(x, y, 0.0), initial_p=lambda x, y, t: f.p(x, y, 0.0),
                       initial_projection="elliptic", initial_q=lambda x, y, t: f.q(x, y, 0.0))


def get_problem(name: str, **kw) -> ProblemSpec:
    if name == "terzaghi":
        return terzaghi(**kw)
    if name == "ms1":
        return ms1(**kw)
    if name == "ms1-gravity":
        return ms1(gravity=True, **kw)
    raise ProblemError(f"unknown problem {name!r}; presets are {PRESETS}")
