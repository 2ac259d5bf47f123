"""Gaussian approximation at the posterior mode and the Laplace objective."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ConvergenceError
from ..gmrf import SparseCholesky, kriging_correction

log = logging.getLogger(__name__)

D2_FLOOR = 1e-8


@dataclass
class GaussianApprox:
    """Mode ``x*`` and precision ``Q* = Q_aug + A' W A`` under ``C x = 0``."""

    mode: np.ndarray
    precision: sp.csc_matrix
    factor: SparseCholesky
    constraints: np.ndarray | None
    objective: float                 # 0.5 x'Qx + sum nll at the mode
    iterations: int
    converged: bool
    grad_norm: float
    trace: list = field(default_factory=list)


def _project(g, C, CCt_inv):
    if C is None:
        return g
    return g - C.T @ (CCt_inv @ (C @ g))


def gaussian_approximation(model, hv, x0=None, tol=1e-6, max_iter=50, max_halvings=30,
                           d2_floor=D2_FLOOR, prior=None):
    """Newton iterations for the constrained posterior mode.

    Parameters
    ----------
    model : LatentModel
    hv : dict
        Natural-scale hyperparameter values.
    x0 : array, optional
        Warm start (projected onto the constraint set).

    Returns
    -------
    GaussianApprox
    """
    A = model.design(hv)
    Q, Qa, C = prior if prior is not None else model.layout.prior_precision(hv)
    n = model.n
    CCt_inv = np.linalg.inv(C @ C.T) if C is not None else None
    x = np.zeros(n) if x0 is None else _project(np.asarray(x0, dtype=float), C, CCt_inv)
    At = A.T.tocsr()

    def evaluate(x):
        eta = A @ x + model.offset
        with np.errstate(over="ignore", invalid="ignore"):
            v, d1, d2 = model.negloglik(eta, hv)
        f = 0.5 * x @ (Qa @ x) + v.sum()
        return f, d1, d2

    f, d1, d2 = evaluate(x)
    if not np.isfinite(f):
        if x0 is not None:
            return gaussian_approximation(model, hv, None, tol, max_iter, max_halvings,
                                          d2_floor, (Q, Qa, C))
        raise ConvergenceError("non-finite objective at the starting point", stage="newton")
    trace = [f]
    converged = False
    it = 0
    gnorm = np.inf
    for it in range(max_iter + 1):
        g = Qa @ x + At @ d1
        gnorm = float(np.max(np.abs(_project(g, C, CCt_inv)))) if n else 0.0
        if gnorm < tol:
            converged = True
            break
        if it == max_iter:
            break
        H = (Qa + At @ sp.diags(np.maximum(d2, d2_floor)) @ A).tocsc()
        fac = SparseCholesky(H)
        d = kriging_correction(-fac.solve(g), fac.solve, C)
        step = 1.0
        for _ in range(max_halvings + 1):
            xn = x + step * d
            fn, d1n, d2n = evaluate(xn)
            if np.isfinite(fn) and fn <= f:
                break
            step *= 0.5
        else:
            if gnorm < 1e-3:
                # rounding-limited: no representable decrease left
                log.debug("Newton stalled at gradient norm %.2e", gnorm)
                break
            raise ConvergenceError(f"objective increased after {max_halvings} step halvings "
                                   f"(gradient norm {gnorm:.3g})", stage="newton")
        x, f, d1, d2 = xn, fn, d1n, d2n
        trace.append(f)
    if not converged:
        log.debug("Newton stopped after %d iterations, gradient norm %.2e", it, gnorm)
    H = (Qa + At @ sp.diags(np.maximum(d2, d2_floor)) @ A).tocsc()
    fac = SparseCholesky(H)
    return GaussianApprox(x, H, fac, C, float(f), it, converged, gnorm, trace)


def _constraint_logdet(fac, C):
    if C is None:
        return 0.0
    W = fac.solve(C.T).reshape(C.shape[1], C.shape[0])
    sign, ld = np.linalg.slogdet(C @ W)
    return float(ld)


def _prior_log_norm(lay, hv, Qa, C):
    """``1/2 log|Q_aug| + 1/2 log|C Q_aug^-1 C'|``, cached per block hyperparameters."""
    key = tuple(hv[h] for b in lay.blocks.values() for h in b.hypers.values())
    cache = lay.__dict__.setdefault("_lognorm_cache", {})
    if key not in cache:
        if len(cache) > 256:
            cache.clear()
        fq = SparseCholesky(Qa)
        cache[key] = 0.5 * fq.logdet + 0.5 * _constraint_logdet(fq, C)
    return cache[key]


def laplace_log_marginal(model, theta=None, x0=None, include_hyperprior=True, hv=None,
                         return_approx=False, **newton):
    """Laplace approximation of ``log pi(theta | y)`` up to a constant.

    ``log pi(theta) + log p(y | x*) + log pi(x* | theta) - log pi_G(x* | y, theta)``
    with both Gaussian densities taken on the constraint subspace (the
    constraint-volume terms cancel).  Without the hyperprior this is the
    log marginal likelihood ``log p(y | theta)``.
    """
    lay = model.layout
    if hv is None:
        hv = lay.values(theta)
    if theta is None:
        theta = np.array([lay.hypers[n].to_t(hv[n]) for n in lay.free_names])
    prior = lay.prior_precision(hv)
    Q, Qa, C = prior
    ga = gaussian_approximation(model, hv, x0=x0, prior=prior, **newton)
    val = (-ga.objective + _prior_log_norm(lay, hv, Qa, C)
           - 0.5 * ga.factor.logdet - 0.5 * _constraint_logdet(ga.factor, C))
    if include_hyperprior:
        val += lay.log_hyperprior(theta)
    if return_approx:
        return float(val), ga
    return float(val)
