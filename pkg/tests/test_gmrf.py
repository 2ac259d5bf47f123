import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from shapely.geometry import Polygon

from ember.errors import MeshError, NotPositiveDefiniteError
from ember.gmrf import (MaternHyper, Mesh2D, SparseCholesky, SparsePrecision, build_mesh_2d, grid_mesh,
                        iid_precision, matern_correlation, projector, projector_1d,
                        projector_2d, rw1_precision, sample_gmrf, spde_precision_1d,
                        spde_precision_2d)
from ember.gmrf.precision import spde_tau2_2d

UNIT = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])


def test_factor_logdet_and_solve():
    rng = np.random.default_rng(0)
    A = sp.random(40, 40, density=0.1, random_state=1)
    Q = (A @ A.T + sp.identity(40) * 2).tocsc()
    f = SparseCholesky(Q)
    D = Q.toarray()
    assert f.logdet == pytest.approx(np.linalg.slogdet(D)[1], abs=1e-10)
    b = rng.normal(size=40)
    assert np.allclose(f.solve(b), np.linalg.solve(D, b), atol=1e-12)


def test_factor_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        SparseCholesky(sp.diags([1.0, -1.0, 2.0]))


def test_mesh_unit_square():
    m = build_mesh_2d(UNIT, 0.5, 0.5, 0.5)
    assert m.n_nodes >= 9
    lo, hi = m.bbox()
    assert np.allclose(lo, [-0.5, -0.5]) and np.allclose(hi, [1.5, 1.5])
    assert np.all(m.areas() > 0)


def test_mesh_collinear_rejected():
    with pytest.raises(MeshError, match="zero area"):
        build_mesh_2d(Polygon([(0, 0), (1, 0), (2, 0)]), 0.5, 0.5, 0.5)


def test_mesh_self_intersection_rejected():
    bow = Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])
    with pytest.raises(MeshError):
        build_mesh_2d(bow, 0.5, 0.5, 0.5)


def test_mesh_refinement_monotone():
    coarse = build_mesh_2d(UNIT, 0.5, 0.5, 0.5)
    fine = build_mesh_2d(UNIT, 0.1, 0.5, 0.5)
    assert fine.n_nodes > coarse.n_nodes
    # interior triangles respect the bound
    interior = fine.interior[fine.triangles].all(axis=1)
    e = fine.nodes[fine.triangles[interior]]
    lens = np.linalg.norm(e - np.roll(e, 1, axis=1), axis=2)
    assert lens.max() <= 0.1 + 1e-9


def test_mesh_save_load(tmp_path):
    m = build_mesh_2d(UNIT, 0.5, 0.5, 0.5)
    m.save(tmp_path)
    back = type(m).load(tmp_path)
    assert np.array_equal(back.nodes, m.nodes) and np.array_equal(back.triangles, m.triangles)


def test_spde_2d_structure():
    g = grid_mesh(np.linspace(0, 4, 9), np.linspace(0, 4, 9))
    # jitter so no triangle has a right angle (those give exactly zero stiffness)
    jitter = np.random.default_rng(0).uniform(-0.1, 0.1, g.nodes.shape)
    m = Mesh2D(g.nodes + jitter, g.triangles, g.interior)
    Q = spde_precision_2d(m, MaternHyper(1.0, 1.0)).Q
    assert (Q != Q.T).nnz == 0
    # two-hop neighbourhood pattern of the FEM graph
    A = sp.csr_matrix((np.ones(len(m.edges())), m.edges().T), shape=(m.n_nodes,) * 2)
    A = ((A + A.T + sp.identity(m.n_nodes)) > 0).astype(float)
    two_hop = ((A @ A) > 0).astype(int)
    assert ((Q != 0).astype(int) != two_hop).nnz == 0


def test_spde_2d_scaling_algebra():
    h1, h2 = MaternHyper(1.0, 1.0), MaternHyper(2.0, 1.0)
    assert h2.kappa() == pytest.approx(0.5 * h1.kappa())
    assert spde_tau2_2d(h2.kappa(), 1.0) == pytest.approx(4 * spde_tau2_2d(h1.kappa(), 1.0))


def test_spde_2d_rejects_bad_hyper():
    with pytest.raises(ValueError):
        MaternHyper(-1.0, 1.0)
    with pytest.raises(ValueError):
        MaternHyper(1.0, 0.0)


def test_spde_2d_variance_center():
    m = build_mesh_2d(Polygon([(0, 0), (6, 0), (6, 6), (0, 6)]), 0.25, 0.6, 2.0)
    prec = spde_precision_2d(m, MaternHyper(1.0, 1.0))
    i = int(np.argmin(np.linalg.norm(m.nodes - 3.0, axis=1)))
    x = sample_gmrf(prec, 10_000, seed=1)
    assert abs(x[:, i].var() - 1.0) < 0.15


def test_spde_1d_four_knots():
    Q = spde_precision_1d(np.linspace(0, 30, 4), MaternHyper(10.0, 1.0)).Q.toarray()
    assert Q.shape == (4, 4)
    assert np.array_equal(Q, Q.T)
    # pentadiagonal band, corners outside the band are zero
    assert Q[0, 3] == 0 and Q[3, 0] == 0
    assert np.all(np.linalg.eigvalsh(Q) > 0)


def test_spde_1d_errors():
    with pytest.raises(ValueError):
        spde_precision_1d([0.0, 1.0], MaternHyper(1.0, 1.0))
    with pytest.raises(ValueError):
        spde_precision_1d([0.0, 2.0, 1.0], MaternHyper(1.0, 1.0))
    with pytest.raises(ValueError):
        spde_precision_1d([0.0, 1.0, 1.0], MaternHyper(1.0, 1.0))


def test_spde_1d_large_kappa_independence():
    knots = np.arange(6.0)
    ratios = []
    for kappa in (1.0, 10.0, 1e3):
        r = np.sqrt(12.0) / kappa
        Q = spde_precision_1d(knots, MaternHyper(r, 1.0)).Q.toarray()
        ratios.append(abs(Q[2, 3]) / Q[2, 2])
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 1e-5


def test_rw1_examples():
    p = rw1_precision(3, 1.0)
    assert np.array_equal(p.Q.toarray(), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.array_equal(p.constraints, [[1, 1, 1]])
    assert np.array_equal(rw1_precision(2, 4.0).Q.toarray(), [[4, -4], [-4, 4]])
    with pytest.raises(ValueError):
        rw1_precision(3, 0.0)
    with pytest.raises(ValueError):
        rw1_precision(1, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_rw1_properties(K, tau, seed):
    p = rw1_precision(K, tau)
    assert np.allclose(p.Q @ np.ones(K), 0.0, atol=1e-12 * tau)
    x = np.random.default_rng(seed).normal(size=K)
    assert x @ (p.Q @ x) == pytest.approx(tau * np.sum(np.diff(x) ** 2), rel=1e-12, abs=1e-12)
    assert (p.Q != p.Q.T).nnz == 0
    SparseCholesky(p.factor_matrix())


def test_projector_identities():
    m = build_mesh_2d(UNIT, 0.5, 0.5, 0.5)
    A = projector_2d(m, m.nodes[:5]).toarray()
    assert np.allclose(A, np.eye(m.n_nodes)[:5])
    c = m.nodes[m.triangles[3]].mean(axis=0)
    row = projector(m, c[None]).toarray()[0]
    assert np.allclose(np.sort(row[row > 0]), [1 / 3] * 3)
    A1 = projector_1d([0.0, 1.0, 2.0], [0.5, 5.0, -1.0]).toarray()
    assert np.allclose(A1, [[0.5, 0.5, 0], [0, 0, 1], [1, 0, 0]])
    with pytest.raises(MeshError):
        projector_2d(m, [[10.0, 10.0]])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.4, 1.4), st.floats(-0.4, 1.4)), min_size=1, max_size=30))
def test_projector_rows_sum_to_one(pts):
    m = _unit_mesh()
    A = projector_2d(m, np.array(pts))
    assert np.allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0, atol=1e-12)


_MESH = {}


def _unit_mesh():
    if "u" not in _MESH:
        _MESH["u"] = build_mesh_2d(UNIT, 0.3, 0.5, 0.5)
    return _MESH["u"]


def test_matern_correlation_values():
    h = MaternHyper(3.0, 1.0)
    assert matern_correlation(0.0, h) == 1.0
    # sqrt(8) K_1(sqrt(8)) to 30 digits: 0.13966747401529314...
    assert matern_correlation(3.0, h) == pytest.approx(0.13966747401529314, abs=1e-12)
    d = np.linspace(0, 10, 200)
    assert np.all(np.diff(matern_correlation(d, h)) < 0)


def test_sample_identity_moments():
    x = sample_gmrf(iid_precision(3, 1.0), 100_000, seed=0)
    se = 1 / np.sqrt(1e5)
    assert np.all(np.abs(x.mean(axis=0)) < 3 * se)
    assert np.all(np.abs(x.var(axis=0) - 1) < 3 * np.sqrt(2) * se)


def test_sample_rw1_constraint_and_seed():
    p = rw1_precision(12, 2.0)
    a = sample_gmrf(p, 50, seed=7)
    assert np.max(np.abs(a.sum(axis=1))) < 1e-10
    assert np.array_equal(a, sample_gmrf(p, 50, seed=7))
    assert not np.array_equal(a, sample_gmrf(p, 50, seed=8))


def test_sample_rw1_covariance():
    # constrained covariance of an RW1 is the pseudo-inverse of tau R
    p = rw1_precision(5, 1.0)
    x = sample_gmrf(p, 200_000, seed=3)
    assert np.allclose(np.cov(x.T), np.linalg.pinv(p.Q.toarray()), atol=0.03)


def test_left_zero_spline_constraint():
    p = spde_precision_1d(np.linspace(0, 60, 4), MaternHyper(30.0, 1.0), "left_zero")
    x = sample_gmrf(p, 20, seed=0)
    assert np.max(np.abs(x[:, 0])) < 1e-12


def test_sparse_precision_validation():
    with pytest.raises(ValueError):
        SparsePrecision(sp.identity(3), np.ones((1, 4)))
    with pytest.raises(ValueError):
        SparsePrecision(sp.identity(3), None, intrinsic=True)
