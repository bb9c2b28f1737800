"""The numba kernels and their numpy fallbacks agree."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ncrb import linalg, rb
from ncrb.decoders import spline, tree
from ncrb.fem import theta
from ncrb.pod import sample_parameters


@pytest.fixture(scope="module")
def spd_small():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((30, 30))
    return B @ B.T + 30 * np.eye(30)


def test_csr_kernels(op4):
    A = op4.matrix(np.array([0.4, 0.6, 0.8, 1.2, 0.1]))
    x = np.random.default_rng(1).standard_normal(op4.n)
    args = (A.indptr, A.indices, A.data)
    a, b = linalg._csr_matvec_nb(*args, x), linalg._csr_matvec_np(*args, x)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13 * np.abs(a).max())
    ra, rb_ = linalg._residual_nb(*args, x, op4.f), linalg._residual_np(*args, x, op4.f)
    np.testing.assert_allclose(ra, rb_, rtol=1e-12, atol=1e-12 * np.abs(ra).max())


def test_pcg_kernels(op4):
    A = op4.matrix(np.array([1.0, 2.0, 0.5, 3.0, 0.2]))
    inv = 1.0 / A.diagonal()
    target = 1e-10 * np.linalg.norm(op4.f)
    da, ia = linalg._pcg_nb(A.indptr, A.indices, A.data, inv, op4.f.copy(), target, 10000)
    db, ib = linalg._pcg_np(A.indptr, A.indices, A.data, inv, op4.f.copy(), target, 10000)
    assert abs(ia - ib) <= 2
    np.testing.assert_allclose(da, db, rtol=1e-8)


def test_cholesky_kernels(spd_small):
    La, pa, _ = linalg._cholesky_nb(spd_small)
    Lb, pb, _ = linalg._cholesky_np(spd_small)
    assert pa == pb == -1
    np.testing.assert_allclose(La, Lb, rtol=1e-13, atol=1e-14)
    b = np.arange(30.0)
    np.testing.assert_allclose(linalg._chol_solve_nb(La, b), linalg._chol_solve_np(La, b), rtol=1e-12)
    bad = spd_small.copy()
    bad[5, 5] = -1.0
    assert linalg._cholesky_nb(bad)[1] == linalg._cholesky_np(bad)[1] == 5


def test_jacobi_kernels(spd_small):
    wa, Va, offa, _ = linalg._jacobi_nb(spd_small, 1e-15, 50)
    wb, Vb, offb, _ = linalg._jacobi_np(spd_small, 1e-15, 50)
    scale = np.abs(wa).max()
    assert offa <= 1e-14 * scale and offb <= 1e-14 * scale
    np.testing.assert_allclose(np.sort(wa), np.sort(wb), rtol=1e-12)
    np.testing.assert_allclose(Va @ np.diag(wa) @ Va.T, Vb @ np.diag(wb) @ Vb.T, atol=1e-11 * scale)


def test_rb_batch_kernels(op4, design4):
    from ncrb.pod import compute_snapshots, pod, project_operators

    snaps = compute_snapshots(op4, sample_parameters(design4, 20, seed=3))
    red = project_operators(op4, pod(snaps, op4.X, eps=1e-5))
    th = theta(sample_parameters(design4, 200, seed=4))
    a, sa = rb._rb_batch_nb(red.blocks, red.f, th)
    b, sb = rb._rb_batch_np(red.blocks, red.f, th)
    assert sa == sb == -1
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12 * np.abs(a).max())


def test_spline_kernels():
    t = spline.clamped_uniform_knots(25, 10)
    x = np.linspace(-1, 1, 777)
    Ba, Bb = spline._design_nb(t, 10, x), spline._design_np(t, 10, x)
    np.testing.assert_allclose(Ba, Bb, atol=1e-14)
    coef = np.random.default_rng(2).standard_normal((Ba.shape[1], 3))
    np.testing.assert_allclose(spline._eval_nb(t, 10, coef, x), spline._eval_np(t, 10, coef, x), atol=1e-12)


@pytest.mark.parametrize("max_features", [None, 2])
def test_tree_kernels_bitwise(max_features):
    rng = np.random.default_rng(5)
    X = rng.random((3000, 3))
    X[:500, 1] = 0.5  # ties
    Y = np.column_stack([np.sin(7 * X[:, 0]) + X[:, 1], X[:, 2] ** 2])
    sample = rng.integers(0, 3000, 3000)
    mf = 3 if max_features is None else max_features
    a = tree._build_tree_nb(X, Y, sample, -1, 2, mf, 99)
    b = tree._build_tree_np(X, Y, sample, -1, 2, mf, 99)
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()
    Xq = rng.random((1000, 3))
    pa = tree._predict_tree_nb(*a[:6], Xq)
    pb = tree._predict_tree_np(*b[:6], Xq)
    assert pa.tobytes() == pb.tobytes()


def test_disable_flag_selects_numpy():
    code = (
        "import json, ncrb; from ncrb.linalg import cholesky; from ncrb.decoders import tree;"
        "print(json.dumps([ncrb.backend_name(), tree.build_tree_arrays.__name__]))"
    )
    env = dict(os.environ, NCRB_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert json.loads(out.stdout) == ["numpy", "_build_tree_np"]
