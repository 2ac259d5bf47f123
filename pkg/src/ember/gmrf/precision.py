"""Sparse precision matrices for Gaussian random-effect priors.

Covers the finite-element SPDE approximation of Matérn fields (alpha = 2)
in one and two dimensions, first-order random walks, and the projector
matrices mapping latent node values to observation locations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.special import k1

from ..errors import MeshError
from .factor import SparseCholesky


@dataclass(frozen=True, eq=False)
class SparsePrecision:
    """Gaussian prior ``N(0, Q^-1)`` restricted to ``constraints @ x = 0``.

    ``intrinsic`` marks a rank-deficient ``Q`` whose null space is removed by
    the constraint rows; such precisions are factorised as ``Q + C'C``,
    which agrees with ``Q`` on the constrained subspace.
    """

    Q: sp.csc_matrix
    constraints: np.ndarray | None = None
    intrinsic: bool = False

    def __post_init__(self):
        Q = sp.csc_matrix(self.Q, dtype=float)
        Q.sort_indices()
        object.__setattr__(self, "Q", Q)
        if self.constraints is not None:
            C = np.atleast_2d(np.asarray(self.constraints, dtype=float))
            if C.shape[0] == 0:
                C = None
            elif C.shape[1] != Q.shape[0]:
                raise ValueError("constraint matrix has wrong number of columns")
            object.__setattr__(self, "constraints", C)
        if self.intrinsic and self.constraints is None:
            raise ValueError("intrinsic precision requires constraints")

    @property
    def n(self):
        return self.Q.shape[0]

    def factor_matrix(self):
        """Positive definite matrix used for factorisation."""
        if self.intrinsic:
            C = self.constraints
            return (self.Q + sp.csc_matrix(C.T @ C)).tocsc()
        return self.Q


@dataclass(frozen=True)
class MaternHyper:
    """Matérn hyperparameters: empirical range and marginal sd."""

    range: float
    sd: float

    def __post_init__(self):
        if not (self.range > 0 and self.sd > 0):
            raise ValueError(f"Matérn range and sd must be positive, got {self.range}, {self.sd}")

    def kappa(self, nu=1.0):
        return np.sqrt(8.0 * nu) / self.range


def fem_matrices_2d(mesh):
    """Lumped mass (diagonal) and stiffness matrices of P1 elements."""
    nodes, tri = mesh.nodes, mesh.triangles
    n = len(nodes)
    p0, p1, p2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    # edge vectors opposite each vertex
    e0, e1, e2 = p2 - p1, p0 - p2, p1 - p0
    area = 0.5 * np.abs(e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0]))
    E = np.stack([e0, e1, e2], axis=1)                      # (t, 3, 2)
    K = np.einsum("tik,tjk->tij", E, E) / (4.0 * area)[:, None, None]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    G = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n, n)).tocsc()
    G = 0.5 * (G + G.T)
    c = np.bincount(tri.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    return c, G.tocsc()


def fem_matrices_1d(knots):
    x = np.asarray(knots, dtype=float)
    h = np.diff(x)
    n = len(x)
    c = np.zeros(n)
    c[:-1] += h / 2
    c[1:] += h / 2
    main = np.zeros(n)
    main[:-1] += 1 / h
    main[1:] += 1 / h
    G = sp.diags([-1 / h, main, -1 / h], [-1, 0, 1], shape=(n, n), format="csc")
    return c, G


def _spde_q(c, G, kappa, tau2):
    Cinv = sp.diags(1.0 / c)
    C = sp.diags(c)
    GCG = G @ Cinv @ G
    Q = tau2 * (kappa ** 4 * C + 2 * kappa ** 2 * G + GCG)
    Q = sp.csc_matrix(Q)
    # exact symmetry: average with the transpose
    return sp.csc_matrix(0.5 * (Q + Q.T))


def spde_tau2_2d(kappa, sd):
    return 1.0 / (4.0 * np.pi * kappa ** 2 * sd ** 2)


def spde_tau2_1d(kappa, sd):
    # alpha = 2 in one dimension gives smoothness 3/2
    return 1.0 / (4.0 * kappa ** 3 * sd ** 2)


def spde_precision_2d(mesh, hyper):
    """Precision of the alpha = 2 SPDE field on a triangulation.

    ``Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^-1 G)`` with lumped mass
    ``C``, stiffness ``G``, ``kappa = sqrt(8) / range`` and ``tau`` set so the
    stationary marginal sd equals ``hyper.sd``.  Natural (Neumann) boundary.
    """
    kappa = hyper.kappa(1.0)
    c, G = fem_matrices_2d(mesh)
    return SparsePrecision(_spde_q(c, G, kappa, spde_tau2_2d(kappa, hyper.sd)))


def spde_precision_1d(knots, hyper, constraint=None):
    """One-dimensional alpha = 2 SPDE precision over knot weights.

    In 1D the alpha = 2 operator corresponds to smoothness 3/2, so
    ``kappa = sqrt(12) / range``.  ``constraint`` is ``None``,
    ``"sum_zero"`` or ``"left_zero"`` (value zero at the first knot).
    """
    x = np.asarray(knots, dtype=float)
    if x.ndim != 1 or len(x) < 3:
        raise ValueError("at least three knots are required")
    if np.any(np.diff(x) <= 0):
        raise ValueError("knots must be strictly increasing")
    kappa = hyper.kappa(1.5)
    c, G = fem_matrices_1d(x)
    Q = _spde_q(c, G, kappa, spde_tau2_1d(kappa, hyper.sd))
    return SparsePrecision(Q, spline_constraint(x, constraint))


def spline_constraint(knots, kind):
    n = len(knots)
    if kind is None:
        return None
    if kind == "sum_zero":
        return np.ones((1, n))
    if kind == "left_zero":
        row = np.zeros((1, n))
        row[0, 0] = 1.0
        return row
    raise ValueError(f"unknown spline constraint {kind!r}")


def rw1_structure(K):
    d = np.full(K, 2.0)
    d[0] = d[-1] = 1.0
    return sp.diags([-np.ones(K - 1), d, -np.ones(K - 1)], [-1, 0, 1], shape=(K, K), format="csc")


def rw1_precision(K, tau):
    """First-order random walk ``tau * R`` with a sum-to-zero constraint."""
    if K < 2:
        raise ValueError("RW1 needs at least two levels")
    if not tau > 0:
        raise ValueError("RW1 precision must be positive")
    return SparsePrecision(tau * rw1_structure(K), np.ones((1, K)), intrinsic=True)


def iid_precision(n, tau):
    if not tau > 0:
        raise ValueError("iid precision must be positive")
    return SparsePrecision(sp.identity(n, format="csc") * tau)


def matern_correlation(d, hyper=None, kappa=None):
    """Matérn correlation with smoothness 1: ``kappa d K_1(kappa d)``.

    Equals 1 at distance 0 (the continuous limit).
    """
    if kappa is None:
        kappa = hyper.kappa(1.0)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    x = kappa * d
    with np.errstate(invalid="ignore"):
        out = np.where(x > 0, x * k1(np.where(x > 0, x, 1.0)), 1.0)
    return float(out) if out.ndim == 0 else out


def projector_1d(knots, values):
    """Piecewise-linear interpolation weights; outside values clamp to the
    boundary knot."""
    x = np.asarray(knots, dtype=float)
    v = np.clip(np.asarray(values, dtype=float), x[0], x[-1])
    j = np.clip(np.searchsorted(x, v, side="right") - 1, 0, len(x) - 2)
    w = (v - x[j]) / (x[j + 1] - x[j])
    m = len(v)
    rows = np.repeat(np.arange(m), 2)
    cols = np.column_stack([j, j + 1]).ravel()
    vals = np.column_stack([1 - w, w]).ravel()
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, len(x)))
    A.eliminate_zeros()
    return A


class _TriangleLocator:
    def __init__(self, mesh):
        self.mesh = mesh
        self.cent = mesh.nodes[mesh.triangles].mean(axis=1)
        self.tree = cKDTree(self.cent)

    def barycentric(self, tri_idx, pts):
        P = self.mesh.nodes[self.mesh.triangles[tri_idx]]        # (m, 3, 2)
        v0 = P[:, 1] - P[:, 0]
        v1 = P[:, 2] - P[:, 0]
        v2 = pts - P[:, 0]
        det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
        return np.column_stack([1 - l1 - l2, l1, l2])

    def locate(self, pts, tol=1e-10):
        m = len(pts)
        found = -np.ones(m, dtype=np.int64)
        bary = np.zeros((m, 3))
        k = min(12, len(self.cent))
        _, cand = self.tree.query(pts, k=k)
        cand = np.atleast_2d(cand).reshape(m, k)
        for j in range(k):
            todo = found < 0
            if not np.any(todo):
                break
            t = cand[todo, j]
            b = self.barycentric(t, pts[todo])
            ok = np.all(b >= -tol, axis=1)
            idx = np.flatnonzero(todo)[ok]
            found[idx] = t[ok]
            bary[idx] = b[ok]
        for i in np.flatnonzero(found < 0):
            t_all = np.arange(len(self.cent))
            b = self.barycentric(t_all, np.repeat(pts[i:i + 1], len(t_all), axis=0))
            ok = np.flatnonzero(np.all(b >= -tol, axis=1))
            if len(ok):
                found[i] = ok[0]
                bary[i] = b[ok[0]]
        return found, bary


def projector_2d(mesh, points):
    """Barycentric interpolation matrix from mesh nodes to ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri, bary = _TriangleLocator(mesh).locate(pts)
    if np.any(tri < 0):
        i = int(np.flatnonzero(tri < 0)[0])
        raise MeshError(f"query point {tuple(pts[i])} lies outside the mesh")
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    m = len(pts)
    rows = np.repeat(np.arange(m), 3)
    cols = mesh.triangles[tri].ravel()
    A = sp.csr_matrix((bary.ravel(), (rows, cols)), shape=(m, mesh.n_nodes))
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def projector(basis, points):
    """Dispatch on the basis: a :class:`Mesh2D` or a 1D knot array."""
    from .mesh import Mesh2D

    if isinstance(basis, Mesh2D):
        return projector_2d(basis, points)
    return projector_1d(basis, points)


def kriging_correction(x, solve, C, e=None):
    """Condition ``x`` (vector or columns) on ``C x = e``.

    ``solve`` applies ``Q^{-1}``.  Returns ``x - Q^-1 C' (C Q^-1 C')^-1 (C x - e)``.
    """
    if C is None:
        return x
    W = solve(C.T)                       # (n, k)
    W = W.reshape(C.shape[1], C.shape[0])
    S = C @ W
    r = C @ x
    if e is not None:
        r = r - (e if x.ndim == 1 else e[:, None])
    return x - W @ np.linalg.solve(S, r)


def sample_gmrf(prec, n, seed, mean=None):
    """Draw ``n`` exact samples from a (constrained) GMRF.

    Unconstrained draws use the sparse Cholesky factor; constraints are then
    imposed by conditioning.  Returns an array of shape ``(n, dim)``.
    """
    rng = np.random.default_rng(seed)
    fac = SparseCholesky(prec.factor_matrix())
    z = rng.standard_normal((prec.n, n))
    x = fac.sqrt_inv_apply(z)
    x = kriging_correction(x, fac.solve, prec.constraints)
    if mean is not None:
        x = x + np.asarray(mean, dtype=float)[:, None]
    return x.T
