import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from biotdg.linsolve import SingularMatrixError, as_csr, dense_solve, fgmres, gmres, spmv


def test_spmv_identity_and_zero():
    x = np.arange(5.0)
    np.testing.assert_array_equal(spmv(as_csr(sp.identity(5)), x), x)
    np.testing.assert_array_equal(spmv(as_csr(sp.csr_matrix((5, 5))), x), np.zeros(5))


def test_spmv_random_against_dense():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((50, 50)) * (rng.random((50, 50)) < 0.3)
    x = rng.standard_normal(50)
    y = spmv(as_csr(A), x)
    assert np.linalg.norm(y - A @ x) <= 1e-14 * np.linalg.norm(A @ x)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(as_csr(sp.identity(3)), np.ones(4))


def test_as_csr_sorted_indices():
    A = as_csr(sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 0], [2, 0, 2])), shape=(2, 3)))
    assert list(A.indices[A.indptr[0]:A.indptr[1]]) == [0, 2]
    assert A[0, 2] == 4.0


def test_dense_solve_examples():
    b = np.array([3.0, -1.0, 2.0])
    np.testing.assert_array_equal(dense_solve(np.eye(3), b), b)
    np.testing.assert_allclose(dense_solve([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0])


def _conjugate_residual(A, b, tol=1e-14, maxit=500):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    Ar = A @ r
    Ap = Ar.copy()
    rAr = r @ Ar
    for _ in range(maxit):
        alpha = rAr / (Ap @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * np.linalg.norm(b):
            break
        Ar = A @ r
        rAr_new = r @ Ar
        beta = rAr_new / rAr
        rAr = rAr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
    return x


def test_dense_solve_against_conjugate_residual():
    rng = np.random.default_rng(2)
    Q, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    A = Q @ np.diag(rng.uniform(1.0, 10.0, 30)) @ Q.T
    b = rng.standard_normal(30)
    x = dense_solve(A, b)
    oracle = _conjugate_residual(A, b)
    assert np.linalg.norm(x - oracle) <= 1e-10 * np.linalg.norm(oracle)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_dense_solve_singular():
    with pytest.raises(SingularMatrixError):
        dense_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        dense_solve(np.ones((2, 3)), np.ones(2))


def test_gmres_identity_one_iteration():
    b = np.random.default_rng(3).standard_normal(20)
    x, rep = gmres(lambda v: v, None, b, tol=1e-12)
    assert rep.converged and rep.iterations == 1
    np.testing.assert_allclose(x, b)


def test_gmres_three_distinct_eigenvalues():
    d = np.repeat([1.0, 3.0, 7.0], 10)
    b = np.random.default_rng(4).standard_normal(30)
    x, rep = gmres(lambda v: d * v, None, b, tol=1e-12)
    assert rep.converged and rep.iterations <= 3
    assert np.linalg.norm(d * x - b) <= 1e-12 * np.linalg.norm(b)


def test_gmres_exact_inverse_preconditioner():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((25, 25)) + 6 * np.eye(25)
    b = rng.standard_normal(25)
    x, rep = gmres(lambda v: A @ v, lambda v: dense_solve(A, v), b, tol=1e-10)
    assert rep.converged and rep.iterations == 1


def test_gmres_reports_true_residual_and_monotone_history():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((60, 60)) + 8 * np.eye(60)
    b = rng.standard_normal(60)
    x, rep = gmres(lambda v: A @ v, None, b, tol=1e-10, restart=100)
    assert rep.converged
    h = np.asarray(rep.residual_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    true = np.linalg.norm(b - A @ x)
    assert h[-1] == pytest.approx(true, rel=1e-12)
    assert rep.final_relative_residual == pytest.approx(true / np.linalg.norm(b), rel=1e-12)
    assert true <= 1e-10 * np.linalg.norm(b)


def test_gmres_restarted_and_max_iter():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((80, 80)) + 15 * np.eye(80)
    b = rng.standard_normal(80)
    x, rep = gmres(lambda v: A @ v, None, b, tol=1e-9, restart=10, max_iter=2000)
    assert rep.converged
    assert np.linalg.norm(b - A @ x) <= 1e-9 * np.linalg.norm(b)
    x, rep = gmres(lambda v: A @ v, None, b, tol=1e-12, restart=5, max_iter=7)
    assert not rep.converged and rep.iterations == 7 and len(rep.residual_history) > 1


def test_gmres_zero_rhs_and_bad_tol():
    x, rep = gmres(lambda v: 2 * v, None, np.zeros(4))
    assert rep.converged and rep.iterations == 0 and not x.any()
    with pytest.raises(ValueError):
        gmres(lambda v: v, None, np.ones(3), tol=1.5)


def test_fgmres_matches_gmres_for_linear_preconditioner():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((40, 40)) + 7 * np.eye(40)
    D = np.diag(A).copy()
    b = rng.standard_normal(40)
    x1, r1 = gmres(lambda v: A @ v, lambda v: v / D, b, tol=1e-11)
    x2, r2 = fgmres(lambda v: A @ v, lambda v: v / D, b, tol=1e-11)
    assert r1.iterations == r2.iterations
    np.testing.assert_allclose(x1, x2, rtol=1e-9, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_gmres_history_non_increasing(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    _, rep = gmres(lambda v: A @ v, None, b, tol=1e-10, restart=100)
    h = np.asarray(rep.residual_history)
    assert h.size >= 1
    assert np.all(np.diff(h) <= 1e-10 * h[0])
    assert rep.converged == (rep.final_relative_residual <= 1e-10)
