"""Shared pytest configuration: per-criterion pass/fail summary for the acceptance suite."""
import time

import pytest

CRITERIA = {
    1: "spectral solve equals dense oracle; r = 2 splits into one 1x1 and one 2x2 block",
    2: "MS1 temporal order (p, L2L2): r = 0 >= 0.9, r = 1 >= 1.9",
    3: "MS1 spatial order (r = 1): p, q >= 0.9, u >= 1.9",
    4: "Terzaghi 1x32 dG(0): relative L2 pressure error <= 2%",
    5: "fixed-stress: tol 1e-10, matches dense <= 1e-8, residual ratios < 1",
    6: "preconditioned GMRES: dG(0) <= 10, dG(1) <= 25, dG(0) refinement change <= 2",
    7: "local mass residual <= 1e-10 x problem scale",
    8: "algebraic identities: storage forms, b = 1 - K_dr/K_s, r = 1 matrices, W eigenvalues",
}

_ITEMS: dict = {}
_OUTCOMES: dict = {}
_DURATIONS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _ITEMS[item.nodeid] = int(m.args[0])


def pytest_runtest_logreport(report):
    n = _ITEMS.get(report.nodeid)
    if n is None:
        return
    _DURATIONS[n] = _DURATIONS.get(n, 0.0) + report.duration
    if report.when == "call" or report.failed or report.skipped:
        ok = report.passed and report.when == "call"
        _OUTCOMES[n] = _OUTCOMES.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _ITEMS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n not in _OUTCOMES:
            status = "NOT RUN"
        else:
            status = "PASS" if _OUTCOMES[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status:7s} {title} ({_DURATIONS.get(n, 0.0):.1f} s)")


@pytest.fixture
def stopwatch():
    """Returns a callable giving seconds elapsed since the fixture was created."""
    t0 = time.perf_counter()
    return lambda: time.perf_counter() - t0
