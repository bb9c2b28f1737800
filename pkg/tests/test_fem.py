import numpy as np
import pytest
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from ncrb.fem import (
    DesignSet,
    ParameterError,
    ParameterVector,
    assemble_affine,
    energy_norm,
    output_compliant,
    solve_truth,
    theta,
    x_norm,
)
from ncrb.geometry import ROOT, FinShape, build_fin_mesh


def monolithic(mesh, mu):
    """Element-by-element assembly of the full matrix and load at one parameter (independent oracle)."""
    cond = np.concatenate([[1.0], mu[:-1]])
    Bi = mu[-1]
    n = mesh.n_nodes
    rows, cols, vals = [], [], []
    for t, reg in zip(mesh.triangles, mesh.regions):
        P = mesh.nodes[t]
        G = np.linalg.inv(np.column_stack([np.ones(3), P]))[1:]  # gradients of the hat functions, (2, 3)
        area = 0.5 * abs(np.linalg.det(np.column_stack([np.ones(3), P])))
        Ke = cond[reg] * area * G.T @ G
        for a in range(3):
            for b in range(3):
                rows.append(t[a]), cols.append(t[b]), vals.append(Ke[a, b])
    f = np.zeros(n)
    for (i, j), tag in zip(mesh.edges, mesh.edge_tags):
        L = np.linalg.norm(mesh.nodes[i] - mesh.nodes[j])
        if tag == ROOT:
            f[i] += L / 2
            f[j] += L / 2
        else:
            Me = Bi * L / 6 * np.array([[2.0, 1.0], [1.0, 2.0]])
            for a, p in enumerate((i, j)):
                for b, q in enumerate((i, j)):
                    rows.append(p), cols.append(q), vals.append(Me[a, b])
    return scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr(), f


def quadrature_energy(mesh, mu, v):
    """Energy form by per-element integration: exact gradients plus 2-point Gauss on Robin edges."""
    cond = np.concatenate([[1.0], mu[:-1]])
    total = 0.0
    for t, reg in zip(mesh.triangles, mesh.regions):
        P = mesh.nodes[t]
        M = np.column_stack([np.ones(3), P])
        grad = np.linalg.solve(M, v[t])[1:]
        total += cond[reg] * 0.5 * abs(np.linalg.det(M)) * grad @ grad
    g = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    for (i, j), tag in zip(mesh.edges, mesh.edge_tags):
        if tag != ROOT:
            L = np.linalg.norm(mesh.nodes[i] - mesh.nodes[j])
            vals = (1 - g) * v[i] + g * v[j]
            total += mu[-1] * L * 0.5 * np.sum(vals**2)
    return total


def test_parameter_vector_json_roundtrip():
    p = ParameterVector((0.4, 0.6, 0.8, 1.2), 0.1)
    assert p.P == 5
    text = p.to_json()
    assert '"Bi": 0.1' in text and '"k": [0.4, 0.6, 0.8, 1.2]' in text
    assert ParameterVector.from_json(text) == p
    np.testing.assert_array_equal(p.as_array(), [0.4, 0.6, 0.8, 1.2, 0.1])
    with pytest.raises(ParameterError):
        ParameterVector((1.0, -1.0), 0.1)


def test_theta_layout():
    np.testing.assert_array_equal(theta([2.0, 3.0, 0.5]), [1.0, 2.0, 3.0, 0.5])
    assert theta(np.ones((7, 3))).shape == (7, 4)


def test_design_set_defaults_and_active():
    d = DesignSet.default(4, 3)
    assert d.P == 3 and d.dim == 5
    assert d.active == (True, True, False, False, True)
    mid = d.midpoint()
    assert mid[2] == pytest.approx(1.0) and mid[4] == pytest.approx(0.1)
    pts = d.from_unit(np.random.default_rng(0).random((50, 3)))
    assert np.all(pts[:, 2:4] == mid[2:4])
    assert all(d.contains(p) for p in pts)
    assert DesignSet.from_dict(d.to_dict()) == d
    with pytest.raises(ParameterError):
        DesignSet((1.0,), (0.5,), ("log",))
    with pytest.raises(ParameterError):
        DesignSet.default(2, 4)


def test_constant_function_identities(op1, mesh1):
    one = np.ones(op1.n)
    for q in range(op1.Q - 1):
        assert op1.block(q).quad(one) == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(op1.block(q).matvec(one), 0.0, atol=1e-12)
    ext_len = mesh1.edge_lengths()[mesh1.edge_tags != ROOT].sum()
    assert op1.block(op1.Q - 1).quad(one) == pytest.approx(ext_len, rel=1e-13)
    assert op1.f @ one == pytest.approx(1.0, rel=1e-14)
    assert op1.X.quad(one) == pytest.approx(2.25, rel=1e-13)
    assert np.count_nonzero(op1.f) == 5  # the root nodes at pitch 0.25


@pytest.mark.parametrize("n_fins,r", [(1, 1), (2, 2), (4, 1)])
def test_affine_matches_monolithic(n_fins, r):
    mesh = build_fin_mesh(FinShape(n_fins=n_fins, refinement=r))
    op = assemble_affine(mesh)
    rng = np.random.default_rng(n_fins)
    for mu in [np.r_[np.ones(n_fins), 0.3], np.r_[rng.uniform(0.1, 10, n_fins), rng.uniform(0.01, 1)]]:
        A, f = monolithic(mesh, mu)
        np.testing.assert_allclose(op.matrix(mu).to_dense(), A.toarray(), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(op.f, f, rtol=1e-14)


def test_blocks_symmetric_psd_and_sum_spd(op4, design4):
    for q in range(op4.Q):
        B = op4.block(q).to_dense()
        np.testing.assert_allclose(B, B.T, atol=1e-14)
        assert scipy.linalg.eigvalsh(B)[0] > -1e-12
    rng = np.random.default_rng(3)
    for mu in design4.from_unit(rng.random((20, 5))):
        assert scipy.linalg.eigvalsh(op4.matrix(mu).to_dense())[0] > 0


def test_f_supported_on_root(op4):
    from ncrb.geometry import FinShape as FS

    mesh = build_fin_mesh(FS(n_fins=4, refinement=1))
    root_nodes = np.unique(mesh.edges[mesh.edge_tags == ROOT])
    assert set(np.flatnonzero(op4.f)) == set(root_nodes.tolist())


def test_reference_parameter_solves(op4):
    mu = np.array([0.4, 0.6, 0.8, 1.2, 0.1])
    sol = solve_truth(op4, mu)
    A = op4.matrix(mu)
    assert np.linalg.norm(A.matvec(sol.u) - op4.f) <= 1e-12 * np.linalg.norm(op4.f)
    assert sol.u.min() > 0


def test_truth_matches_dense_direct(op1):
    mu = np.array([2.0, 0.05])
    u = solve_truth(op1, mu).u
    ref = scipy.linalg.solve(op1.matrix(mu).to_dense(), op1.f, assume_a="pos")
    np.testing.assert_allclose(u, ref, rtol=1e-9)


def test_truth_rejects_bad_parameters(op1):
    with pytest.raises(ParameterError):
        solve_truth(op1, np.array([1.0, -0.1]))
    with pytest.raises(ParameterError):
        solve_truth(op1, np.array([1.0, 0.1, 0.2]))


def test_output_of_constant_and_compliance(op4):
    assert output_compliant(op4, 3.5 * np.ones(op4.n)) == pytest.approx(3.5, rel=1e-14)
    mu = np.array([1.0, 1.0, 1.0, 1.0, 0.1])
    sol = solve_truth(op4, mu)
    s = output_compliant(op4, sol)
    assert s == pytest.approx(op4.matrix(mu).quad(sol.u), rel=1e-11)
    assert s > 0


def test_output_decreases_with_biot(op4):
    outs = [output_compliant(op4, solve_truth(op4, np.array([1.0, 1.0, 1.0, 1.0, bi]))) for bi in (0.05, 0.1, 0.2, 0.4, 0.8)]
    assert all(a > b for a, b in zip(outs, outs[1:]))


def test_norms(op4, design4):
    rng = np.random.default_rng(11)
    v = rng.standard_normal(op4.n)
    mu = design4.from_unit(rng.random(5))[0]
    assert energy_norm(op4, mu, np.zeros(op4.n)) == 0.0
    assert energy_norm(op4, mu, 2 * v) == pytest.approx(2 * energy_norm(op4, mu, v), rel=1e-14)
    mesh = build_fin_mesh(FinShape(n_fins=4, refinement=1))
    assert energy_norm(op4, mu, v) ** 2 == pytest.approx(quadrature_energy(mesh, mu, v), rel=1e-10)
    assert x_norm(op4, v) > 0


def test_h_convergence_monotone():
    # grids are nested, so the energy error against the finest grid is s_ref - s_r
    mu = np.array([0.5, 0.2])
    s = {}
    for r in (1, 2, 4, 8):
        op = assemble_affine(build_fin_mesh(FinShape(n_fins=1, refinement=r)))
        s[r] = output_compliant(op, solve_truth(op, mu))
    err = [s[8] - s[r] for r in (1, 2, 4)]
    assert all(e > 0 for e in err)
    assert err[0] > err[1] > err[2]


@settings(max_examples=10, deadline=None)
@given(
    k=st.floats(0.1, 10.0),
    bi=st.floats(0.01, 1.0),
)
def test_maximum_principle_property(op1, k, bi):
    u = solve_truth(op1, np.array([k, bi])).u
    assert u.min() > 0
