import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biotdg.config import KEYS, ConfigError, RunConfig, build_material, default_config_text, parse_config


def test_slab_count_from_tau_and_T():
    cfg = parse_config("problem = terzaghi\nr = 0\ntau = 0.02\nT = 0.6")
    part = cfg.partition(1.0)
    assert part.n_slabs == 30
    assert part.T == pytest.approx(0.6)


def test_degree_range_error_names_key_and_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("r = -1")
    assert exc.value.line == 1 and exc.value.key == "r"
    assert str(exc.value).startswith("line 1: r")


def test_inconsistent_time_keys():
    with pytest.raises(ConfigError) as exc:
        parse_config("tau = 0.04\nn_slabs = 10\nT = 0.6")
    assert exc.value.line == 3
    assert "0.6" in str(exc.value)


@pytest.mark.parametrize("text,line,key", [
    ("r = 1\nfoo = 2", 2, "foo"),
    ("r = 1\n\n# c\nr = 2", 4, "r"),
    ("nx = 4.5", 1, "nx"),
    ("tau =", 1, "tau"),
    ("method = explicit", 1, "method"),
    ("write_vtk = maybe", 1, "write_vtk"),
    ("tol = 1,5", 1, "tol"),
    ("T = nan", 1, "T"),
    ("nx = 0", 1, "nx"),
    ("penalty = -1", 1, "penalty"),
    ("tau = 0.07\nT = 0.2", 2, "T"),
    ("b = 1.5", 1, "b"),
    ("mu = 1\nm = -1", 2, "m"),
    ("fs_stab = 0", 1, "fs_stab"),
])
def test_errors_carry_line_numbers(text, line, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert exc.value.key == key


def test_line_without_equals():
    with pytest.raises(ConfigError) as exc:
        parse_config("\n\nproblem terzaghi")
    assert exc.value.line == 3


def test_comments_whitespace_and_booleans():
    cfg = parse_config("  # header\nnx = 8   # cells\n  write_vtk=Yes\nfs_stab = default\nmethod = Fixed-Stress\n")
    assert cfg.nx == 8 and cfg.write_vtk is True and cfg.fs_stab is None and cfg.method == "fixed-stress"


def test_material_keys_and_k_s():
    cfg = parse_config("lambda = 1\nmu = 1\nk_s = 4")
    assert build_material(cfg).biot_b == pytest.approx(0.5)
    cfg = parse_config("problem = ms1-gravity\ngravity = 0.5, -2")
    assert build_material(cfg).gravity == (0.5, -2.0)


def test_defaults_document_every_key_and_parse_back():
    text = default_config_text()
    for key in KEYS:
        assert f"{key} =" in text
    cfg = parse_config(text)
    ref = RunConfig()
    for name in ("problem", "r", "method", "block_solver", "tol", "restart", "fs_sweeps", "levels", "refine_in",
                 "output_dir", "write_vtk", "write_csv", "write_iterlog"):
        assert getattr(cfg, name) == getattr(ref, name)


def test_default_partition():
    assert RunConfig().partition(0.5).n_slabs == 20
    assert RunConfig(n_slabs=4).partition(0.5).taus[0] == pytest.approx(0.125)
    with pytest.raises(ConfigError):
        RunConfig(tau=0.3).partition(1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.sampled_from([0.01, 0.02, 0.025, 0.05, 0.1, 0.125]))
def test_tau_times_n_equals_T(n, tau):
    T = n * tau
    cfg = parse_config(f"tau = {tau!r}\nT = {T!r}")
    part = cfg.partition(1.0)
    assert part.n_slabs == n
    assert math.isclose(part.T, T, rel_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 1e6, allow_nan=False), st.integers(0, 10))
def test_numbers_parse_locale_independent(tol, r):
    cfg = parse_config(f"tol = {min(tol, 0.5)!r}\nr = {r}\npenalty = {tol!r}")
    assert cfg.tol == min(tol, 0.5) and cfg.r == r and cfg.penalty == tol
