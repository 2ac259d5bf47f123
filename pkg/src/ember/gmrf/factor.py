"""Sparse Cholesky factorisation for symmetric positive definite matrices.

SuperLU is run with a symmetric minimum-degree ordering and no pivoting, so
for an SPD matrix ``P Q P' = L U`` with ``U = D L'``.  That gives the
log-determinant, solves, and the square root needed for sampling.
"""
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NotPositiveDefiniteError


class SparseCholesky:
    """Factor of an SPD sparse matrix ``Q``.

    Parameters
    ----------
    Q : sparse matrix (n, n)
        Symmetric positive definite.
    """

    def __init__(self, Q):
        Q = sp.csc_matrix(Q, dtype=float)
        n = Q.shape[0]
        self.n = n
        if n == 0:
            self._lu = None
            self.logdet = 0.0
            return
        lu = None
        for spec in ("MMD_AT_PLUS_A", "NATURAL"):
            try:
                cand = spla.splu(Q, permc_spec=spec, diag_pivot_thresh=0.0,
                                 options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise NotPositiveDefiniteError(f"factorisation failed: {exc}") from None
            if np.array_equal(cand.perm_r, cand.perm_c):
                lu = cand
                break
        if lu is None:
            raise NotPositiveDefiniteError("SuperLU applied a non-symmetric permutation")
        d = lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise NotPositiveDefiniteError("matrix is not positive definite")
        self._lu = lu
        self._perm = lu.perm_c
        self._sqrt_d = np.sqrt(d)
        self._U = lu.U.tocsr()
        self.logdet = float(np.sum(np.log(d)))

    def solve(self, b):
        if self.n == 0:
            return np.zeros_like(np.asarray(b, dtype=float))
        return self._lu.solve(np.asarray(b, dtype=float))

    def sqrt_inv_apply(self, z):
        """Return ``x`` with ``Cov(x) = Q^{-1}`` when ``z`` is standard normal.

        ``z`` has shape (n,) or (n, m).
        """
        z = np.asarray(z, dtype=float)
        if self.n == 0:
            return z.copy()
        scale = self._sqrt_d if z.ndim == 1 else self._sqrt_d[:, None]
        xp = spla.spsolve_triangular(self._U, scale * z, lower=False)
        return xp[self._perm]


def cholesky(Q):
    return SparseCholesky(Q)
