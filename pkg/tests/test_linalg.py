import numpy as np
import pytest
import scipy.linalg
import scipy.sparse
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ncrb.linalg import (
    ConvergenceError,
    LinAlgError,
    NotPositiveDefiniteError,
    SparseSym,
    cg_solve,
    cholesky,
    dense_cholesky_solve,
    least_squares,
    sym_eigen_desc,
)
from ncrb.matio import FormatError, read_matrix, write_matrix


def sparse_from_dense(A):
    r, c = np.nonzero(A)
    return SparseSym.from_coo(r, c, A[r, c], A.shape[0])


def random_spd(rng, n):
    M = rng.standard_normal((n, n))
    return M.T @ M + np.eye(n)


# --- SparseSym --------------------------------------------------------------


def test_from_coo_sums_duplicates_and_sorts():
    S = SparseSym.from_coo([1, 0, 1, 0, 0], [0, 1, 0, 0, 1], [2.0, 3.0, 4.0, 1.0, 5.0], 2)
    np.testing.assert_array_equal(S.to_dense(), [[1.0, 8.0], [6.0, 0.0]])
    np.testing.assert_array_equal(S.indices, [0, 1, 0])
    S.check_structure()


def test_matvec_matches_scipy(rng):
    A = random_spd(rng, 40)
    A[np.abs(A) < 1.0] = 0.0
    S = sparse_from_dense(A)
    x = rng.standard_normal(40)
    ref = scipy.sparse.csr_matrix(A) @ x
    np.testing.assert_allclose(S.matvec(x), ref, rtol=1e-13, atol=1e-13)
    X = rng.standard_normal((40, 3))
    np.testing.assert_allclose(S.matvec(X), A @ X, rtol=1e-12, atol=1e-12)
    assert S.quad(x) == pytest.approx(x @ A @ x, rel=1e-12)
    np.testing.assert_array_equal(S.diagonal(), np.diag(A))


def test_check_structure_rejects_asymmetric_pattern():
    S = SparseSym.from_coo([0, 0, 1], [0, 1, 1], [1.0, 1.0, 1.0], 2)
    with pytest.raises(LinAlgError):
        S.check_structure()


# --- CG ---------------------------------------------------------------------


def test_cg_identity_one_iteration(rng):
    b = rng.standard_normal(7)
    x, info = cg_solve(sparse_from_dense(np.eye(7)), b, return_info=True)
    np.testing.assert_array_equal(x, b)
    assert info["iterations"] == 1


def test_cg_two_by_two_cramer():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    det = 4 * 3 - 1 * 1
    cramer = np.array([(1 * 3 - 1 * 2) / det, (4 * 2 - 1 * 1) / det])
    x = cg_solve(sparse_from_dense(A), b)
    np.testing.assert_allclose(x, cramer, rtol=1e-14)
    np.testing.assert_allclose(x, [1 / 11, 7 / 11], rtol=1e-14)


@pytest.mark.parametrize("tol", [1e-6, 1e-10, 1e-12])
def test_cg_random_spd_residual(tol):
    rng = np.random.default_rng(50)
    M = rng.standard_normal((50, 50))
    A = M.T @ M + np.eye(50)
    b = rng.standard_normal(50)
    x = cg_solve(sparse_from_dense(A), b, tol=tol)
    assert np.linalg.norm(A @ x - b) <= tol * np.linalg.norm(b)
    np.testing.assert_allclose(x, scipy.linalg.solve(A, b, assume_a="pos"), rtol=1e3 * tol * np.linalg.cond(A))


def test_cg_zero_rhs_and_bad_tol():
    S = sparse_from_dense(np.eye(3))
    np.testing.assert_array_equal(cg_solve(S, np.zeros(3)), 0.0)
    with pytest.raises(ValueError):
        cg_solve(S, np.ones(3), tol=1.5)


def test_cg_reports_nonconvergence():
    rng = np.random.default_rng(1)
    A = random_spd(rng, 30) + 1e4 * np.diag(rng.random(30))
    with pytest.raises(ConvergenceError) as exc:
        cg_solve(sparse_from_dense(A), np.ones(30), tol=1e-14, max_iter=2)
    assert exc.value.residual is not None and exc.value.residual > 0


# --- dense Cholesky ---------------------------------------------------------


def test_cholesky_trivial_cases(rng):
    b = rng.standard_normal(4)
    np.testing.assert_array_equal(dense_cholesky_solve(np.eye(4), b), b)
    # the factor holds sqrt(2) and sqrt(8), so allow one ulp
    np.testing.assert_allclose(dense_cholesky_solve(np.diag([2.0, 8.0]), np.array([2.0, 8.0])), [1.0, 1.0], rtol=2.3e-16)


def test_cholesky_random_residual_and_factor():
    rng = np.random.default_rng(20)
    A = random_spd(rng, 20)
    b = rng.standard_normal(20)
    x = dense_cholesky_solve(A, b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-12
    np.testing.assert_allclose(cholesky(A), scipy.linalg.cholesky(A, lower=True), rtol=1e-10, atol=1e-12)


def test_cholesky_names_failing_pivot():
    A = np.diag([1.0, 2.0, -3.0, 4.0])
    with pytest.raises(NotPositiveDefiniteError) as exc:
        dense_cholesky_solve(A, np.ones(4))
    assert exc.value.pivot == 2
    assert "pivot 2" in str(exc.value)


# --- Jacobi eigensolver -----------------------------------------------------


def test_eigen_diagonal():
    w, V = sym_eigen_desc(np.diag([1.0, 5.0, 3.0]))
    np.testing.assert_array_equal(w, [5.0, 3.0, 1.0])
    np.testing.assert_array_equal(np.abs(V), np.eye(3)[:, [1, 2, 0]])


def test_eigen_two_by_two_hand_solve():
    # characteristic polynomial (2 - l)^2 - 1 = 0 -> l = 3, 1
    w, V = sym_eigen_desc(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(w, [3.0, 1.0], rtol=1e-15)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(np.abs(V[:, 0]), [s, s], rtol=1e-15)
    np.testing.assert_allclose(V[:, 1] * np.sign(V[0, 1]), [s, -s], rtol=1e-15)


@pytest.mark.parametrize("n", [30, 60])
def test_eigen_random_reconstruction(n):
    rng = np.random.default_rng(n)
    B = rng.standard_normal((n, n))
    A = 0.5 * (B + B.T)
    w, V = sym_eigen_desc(A)
    normA = np.linalg.norm(A)
    assert np.linalg.norm(A - V @ np.diag(w) @ V.T) <= 1e-9 * normA
    assert np.linalg.norm(V.T @ V - np.eye(n)) <= 1e-10
    assert np.linalg.norm(A @ V - V * w) <= 1e-10 * normA
    assert np.all(np.diff(w) <= 0)
    assert w.sum() == pytest.approx(np.trace(A), rel=1e-10, abs=1e-10 * normA)
    np.testing.assert_allclose(w, scipy.linalg.eigvalsh(A)[::-1], atol=1e-11 * normA)


def test_eigen_rejects_bad_input():
    with pytest.raises(LinAlgError):
        sym_eigen_desc(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(LinAlgError):
        sym_eigen_desc(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ConvergenceError):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((20, 20))
        sym_eigen_desc(B + B.T, max_sweeps=1)


def test_eigen_deterministic():
    rng = np.random.default_rng(9)
    B = rng.standard_normal((25, 25))
    A = B @ B.T
    w1, V1 = sym_eigen_desc(A)
    w2, V2 = sym_eigen_desc(A.copy())
    assert w1.tobytes() == w2.tobytes() and V1.tobytes() == V2.tobytes()


# --- least squares ----------------------------------------------------------


def test_lstsq_identity(rng):
    T = rng.standard_normal((5, 2))
    np.testing.assert_allclose(least_squares(np.eye(5), T), T, rtol=1e-15, atol=1e-15)


def test_lstsq_exact_line():
    x = np.linspace(-3, 7, 25)
    D = np.column_stack([x, np.ones_like(x)])
    slope, intercept = least_squares(D, 2 * x + 1)
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert intercept == pytest.approx(1.0, abs=1e-12)


def test_lstsq_normal_equations_oracle():
    rng = np.random.default_rng(7)
    D = rng.standard_normal((80, 6))
    T = rng.standard_normal((80, 3))
    C = least_squares(D, T)
    ref = np.linalg.solve(D.T @ D, D.T @ T)
    np.testing.assert_allclose(D @ C - T, D @ ref - T, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(C, ref, rtol=1e-8, atol=1e-10)


def test_lstsq_rank_deficient_regularized():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(30)
    D = np.column_stack([x, x, np.ones(30)])
    C = least_squares(D, 3 * x + 2)
    # the two identical columns share the slope
    assert C[0] == pytest.approx(1.5, rel=1e-5)
    assert C[1] == pytest.approx(1.5, rel=1e-5)
    assert C[2] == pytest.approx(2.0, rel=1e-6)


def test_lstsq_underdetermined_rejected():
    with pytest.raises(ValueError):
        least_squares(np.ones((2, 3)), np.ones(2))


# --- binary matrix format ---------------------------------------------------


def test_matrix_roundtrip_dense_and_sparse(tmp_path, rng):
    A = rng.standard_normal((4, 3))
    write_matrix(tmp_path / "a.bin", A)
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:8] == b"NCRBMAT1" and len(raw) == 17 + 12 * 8
    np.testing.assert_array_equal(read_matrix(tmp_path / "a.bin"), A)
    S = sparse_from_dense(random_spd(rng, 6) * (rng.random((6, 6)) > 0.4) + np.eye(6))
    write_matrix(tmp_path / "s.bin", S)
    B = read_matrix(tmp_path / "s.bin")
    assert isinstance(B, SparseSym)
    np.testing.assert_array_equal(B.to_dense(), S.to_dense())
    v = rng.standard_normal(5)
    write_matrix(tmp_path / "v.bin", v)
    np.testing.assert_array_equal(read_matrix(tmp_path / "v.bin")[:, 0], v)


def test_matrix_rejects_garbage(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"NOTAMATRIX" + bytes(20))
    with pytest.raises(FormatError):
        read_matrix(tmp_path / "bad.bin")
    write_matrix(tmp_path / "t.bin", np.ones((3, 3)))
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_matrix(tmp_path / "t.bin")


# --- properties -------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(
    M=arrays(np.float64, (6, 6), elements=st.floats(-10, 10)),
    b=arrays(np.float64, 6, elements=st.floats(-10, 10)),
)
def test_cholesky_and_cg_agree_property(M, b):
    A = M.T @ M + np.eye(6)
    x = dense_cholesky_solve(A, b)
    y = cg_solve(sparse_from_dense(A), b, tol=1e-12)
    bn = max(np.linalg.norm(b), 1e-300)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * max(bn, 1.0) * np.linalg.norm(A)
    assert np.linalg.norm(A @ y - b) <= 1e-12 * bn or np.linalg.norm(b) == 0


@settings(max_examples=30, deadline=None)
@given(B=arrays(np.float64, (5, 5), elements=st.floats(-100, 100)))
def test_eigen_trace_property(B):
    A = 0.5 * (B + B.T)
    w, V = sym_eigen_desc(A)
    scale = max(np.linalg.norm(A), 1e-300)
    assert abs(w.sum() - np.trace(A)) <= 1e-10 * scale
    assert np.linalg.norm(V.T @ V - np.eye(5)) <= 1e-10
    assert np.all(np.diff(w) <= 0)
