"""Empirical-Bayes fitting: hyperparameter search, posterior fit and sampling."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from ..errors import ConvergenceError, EmberError, FitError, NotPositiveDefiniteError
from ..gmrf import SparseCholesky, SparsePrecision, kriging_correction, sample_gmrf
from .laplace import laplace_log_marginal
from .model import assemble_model
from .priors import PriorConfig

log = logging.getLogger(__name__)


@dataclass
class OptimResult:
    theta: np.ndarray
    value: float
    trace: list
    n_evals: int
    accepted_moves: int
    optimizer_converged: bool
    identifiable: bool
    hessian: np.ndarray | None
    x_mode: np.ndarray | None = None

    @property
    def converged(self):
        return self.optimizer_converged and self.identifiable


class _Objective:
    """Negative Laplace objective with memoisation and warm starts."""

    def __init__(self, model, newton):
        self.model = model
        self.newton = newton
        self.cache = {}
        self.trace = []
        self.best = (np.inf, None)
        self.x_warm = None
        self.accepted = 0
        self.fatol = 1e-4

    def __call__(self, theta):
        key = tuple(np.round(np.asarray(theta, dtype=float), 12))
        if key in self.cache:
            return self.cache[key]
        try:
            val, ga = laplace_log_marginal(self.model, np.asarray(theta), x0=self.x_warm,
                                           return_approx=True, **self.newton)
            f = -val
            if not np.isfinite(f):
                f = np.inf
            else:
                self.x_warm = ga.mode
        except (ConvergenceError, NotPositiveDefiniteError, FloatingPointError,
                OverflowError, ValueError) as exc:
            log.debug("objective failed at %s: %s", theta, exc)
            f = np.inf
        self.cache[key] = f
        self.trace.append((np.array(theta, dtype=float), -f))
        if f < self.best[0]:
            if self.best[1] is not None and f < self.best[0] - self.fatol:
                self.accepted += 1
            self.best = (f, np.array(theta, dtype=float))
        return f


def fd_hessian(fun, x, h=0.05):
    """Central-difference Hessian of ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    H = np.zeros((d, d))
    f0 = fun(x)
    E = np.eye(d) * h
    for i in range(d):
        fp, fm = fun(x + E[i]), fun(x - E[i])
        H[i, i] = (fp - 2 * f0 + fm) / h ** 2
        for j in range(i):
            fpp = fun(x + E[i] + E[j])
            fpm = fun(x + E[i] - E[j])
            fmp = fun(x - E[i] + E[j])
            fmm = fun(x - E[i] - E[j])
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return H


def _flat_profile(obj, theta, v, f_best, step, tol, maxfev):
    """True when the profile of ``obj`` along ``v`` rises by less than ``tol``
    at distance ``step`` on both sides (other directions re-optimised)."""
    d = len(theta)
    # orthonormal basis of the complement of v
    B = np.linalg.svd(v[None, :])[2][1:].T
    for s in (step, -step):
        base = theta + s * v
        if d == 1:
            f = obj(base)
        else:
            res = minimize(lambda z: obj(base + B @ z), np.zeros(d - 1), method="Nelder-Mead",
                           options=dict(initial_simplex=np.vstack([np.zeros(d - 1),
                                                                   0.25 * np.eye(d - 1)]),
                                        fatol=0.1 * tol, xatol=1e-3, maxfev=maxfev))
            f = res.fun
        if not np.isfinite(f) or f - f_best > tol:
            return False
    return True


def _sign_screen(obj, lay, theta0, magnitude):
    """Best start among sign patterns of the free sharing coefficients."""
    names = lay.free_names
    idx = [i for i, n in enumerate(names) if n.endswith(".beta")
           and lay.hypers[n].transform == "identity"]
    if not idx or len(idx) > 4:
        return theta0
    best_f, best = obj(theta0), theta0
    for signs in product((1.0, -1.0), repeat=len(idx)):
        t = theta0.copy()
        t[idx] = np.asarray(signs) * magnitude
        f = obj(t)
        if f < best_f:
            best_f, best = f, t
    return best


def optimize_hyperparameters(model, theta0=None, fatol=1e-4, xatol=1e-3, initial_step=0.5,
                             maxfev=None, check_identifiability=True, ident_tol=1e-3,
                             hessian_step=0.05, sign_screen=True, screen_magnitude=1.0,
                             max_restarts=3, profile_tol=0.01, profile_below=0.1,
                             profile_step=1.0, **newton):
    """Maximise the Laplace objective over the free hyperparameters.

    Nelder-Mead on the transformed scale with an initial simplex of side
    ``initial_step``, restarted from its optimum (simplex side
    ``initial_step / 5``) until a restart no longer improves by ``fatol``.  With ``sign_screen`` the start is the best of
    ``theta0`` and the sign patterns ``+-screen_magnitude`` of the free
    sharing coefficients (the objective is multimodal in their signs).
    An accepted move is an improvement of the best value by more than
    ``fatol``.  When ``check_identifiability`` is set, a finite-difference
    Hessian at the optimum is inspected and a nearly flat direction
    (curvature below ``ident_tol``) marks the fit as not converged.  A flat
    ridge that is curved in the transformed coordinates shows a small but
    non-zero curvature, so when the smallest eigenvalue is below
    ``profile_below`` the profile along its eigenvector is also checked:
    a rise under ``profile_tol`` at distance ``profile_step`` on both sides
    counts as non-identifiable.
    """
    lay = model.layout
    theta0 = lay.theta0() if theta0 is None else np.atleast_1d(np.asarray(theta0, dtype=float))
    if not np.all(np.isfinite(theta0)):
        raise ValueError("theta0 must be finite")
    obj = _Objective(model, newton)
    obj.fatol = fatol
    d = len(theta0)
    f0 = obj(theta0)
    if not np.isfinite(f0):
        raise FitError("Laplace objective is not finite at the starting point", stage="optimize")
    if d == 0:
        return OptimResult(theta0, -f0, obj.trace, 1, 0, True, True, None, obj.x_warm)
    start = _sign_screen(obj, lay, theta0, screen_magnitude) if sign_screen else theta0
    maxfev = maxfev or 200 * (d + 1)
    ok = False
    step = initial_step
    for _ in range(max_restarts + 1):
        f_start = obj.best[0]
        simplex = np.vstack([start, start + step * np.eye(d)])
        res = minimize(obj, start, method="Nelder-Mead",
                       options=dict(initial_simplex=simplex, fatol=fatol, xatol=xatol,
                                    maxfev=maxfev, maxiter=maxfev, adaptive=d > 2))
        ok = bool(res.success)
        start = obj.best[1]
        # restarts only need to re-open a collapsed simplex
        step = max(initial_step / 5, 10 * xatol)
        if not ok or obj.best[0] > f_start - fatol:
            break
    f_best, theta = obj.best
    if not ok:
        log.warning("hyperparameter search stopped: %s", res.message)
    H = None
    identifiable = True
    if check_identifiability:
        H = fd_hessian(obj, theta, hessian_step)
        if not np.all(np.isfinite(H)):
            identifiable = False
        else:
            ev = np.linalg.eigvalsh(0.5 * (H + H.T))
            identifiable = bool(ev.min() > ident_tol)
            if identifiable and ev.min() < profile_below:
                v = np.linalg.eigh(0.5 * (H + H.T))[1][:, 0]
                identifiable = not _flat_profile(obj, theta, v, f_best, profile_step,
                                                 profile_tol, 40 * d)
            if not identifiable:
                log.warning("objective is flat along some direction (min curvature %.2e); "
                            "hyperparameters may be non-identifiable", ev.min())
        # the Hessian probes may have found a better point
        f_best, theta = obj.best
    # re-establish the warm mode at the returned optimum
    obj.x_warm = None
    obj.cache.pop(tuple(np.round(theta, 12)), None)
    obj(theta)
    return OptimResult(theta, -f_best, obj.trace, len(obj.cache), obj.accepted, ok, identifiable,
                       H, obj.x_warm)


@dataclass(eq=False)
class PosteriorFit:
    """Plug-in posterior: hyperparameters at the Laplace optimum and the
    Gaussian approximation of the latent field there."""

    layout: object
    hyper: dict
    theta: np.ndarray
    mode: np.ndarray
    precision: sp.csc_matrix
    constraints: np.ndarray | None
    log_marginal: float
    trace: list = field(default_factory=list)
    optimizer_converged: bool = True
    identifiable: bool = True
    newton_converged: bool = True
    n_evals: int = 0
    accepted_moves: int = 0
    spec_digest: str = ""
    data_digest: str = ""
    seed: int = 0
    hessian: np.ndarray | None = None
    model: object = None

    @property
    def converged(self):
        return self.optimizer_converged and self.identifiable and self.newton_converged

    @property
    def spec(self):
        return self.layout.spec

    def block(self, name):
        return self.layout.blocks[name]

    def effect_mode(self, name):
        return self.mode[self.layout.blocks[name].slice]

    def factor(self):
        if getattr(self, "_factor", None) is None:
            self._factor = SparseCholesky(self.precision)
        return self._factor

    def marginal_variance(self, idx):
        """Posterior variances of latent entries ``idx`` (with constraints)."""
        idx = np.atleast_1d(np.asarray(idx))
        fac = self.factor()
        E = np.zeros((len(self.mode), len(idx)))
        E[idx, np.arange(len(idx))] = 1.0
        S = fac.solve(E).reshape(len(self.mode), len(idx))
        S = kriging_correction(S, fac.solve, self.constraints)
        return S[idx, np.arange(len(idx))]

    def marginal_sd(self, idx):
        return np.sqrt(np.maximum(self.marginal_variance(idx), 0.0))


def sample_posterior(fit, n, seed, grid=None):
    """``n`` latent draws from ``N(x*, Q*^-1)`` under the constraints.

    With a :class:`HyperGrid` the draws come from the grid mixture instead
    of the plug-in Gaussian.  Returns an array ``(n, dim)``.
    """
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    if grid is None:
        return sample_gmrf(SparsePrecision(fit.precision, fit.constraints), int(n), seed,
                           mean=fit.mode)
    rng = np.random.default_rng(seed)
    which = rng.choice(len(grid.weights), size=int(n), p=grid.weights)
    out = np.empty((int(n), len(fit.mode)))
    seeds = np.random.SeedSequence(seed).spawn(len(grid.weights))
    for k in np.unique(which):
        sel = which == k
        out[sel] = sample_gmrf(SparsePrecision(grid.precisions[k], fit.constraints),
                               int(sel.sum()), seeds[k], mean=grid.modes[k])
    return out


def data_digest(data, subsample=None):
    h = hashlib.sha256()
    tab = data.table
    for c in ("cell_id", "day_index", "count", "fwi", "fa", "volume"):
        h.update(np.ascontiguousarray(getattr(tab, c)).tobytes())
    h.update(np.ascontiguousarray(data.events.burnt_area).tobytes())
    h.update(np.float64(data.u).tobytes())
    if subsample is not None:
        h.update(np.ascontiguousarray(subsample.rows).tobytes())
        h.update(np.ascontiguousarray(subsample.p_incl).tobytes())
    return h.hexdigest()


def fit_model(model, theta0=None, seed=0, spec_digest="", data_digest="", **opt):
    """Optimise the hyperparameters of an assembled model and return the
    plug-in :class:`PosteriorFit`."""
    try:
        res = optimize_hyperparameters(model, theta0, **opt)
    except EmberError:
        raise
    except Exception as exc:       # numerical failures get a stage label
        raise FitError(str(exc), stage="optimize") from exc
    lay = model.layout
    hv = lay.values(res.theta)
    try:
        val, ga = laplace_log_marginal(model, res.theta, x0=res.x_mode, return_approx=True)
    except EmberError as exc:
        raise FitError(str(exc), stage="final") from exc
    return PosteriorFit(lay, hv, np.asarray(res.theta), ga.mode, ga.precision, ga.constraints,
                        val, res.trace, res.optimizer_converged, res.identifiable, ga.converged,
                        res.n_evals, res.accepted_moves, spec_digest or lay.spec.digest(),
                        data_digest, int(seed), res.hessian, model)


def fit(spec, data, subsample=None, priors=PriorConfig(), seed=0, mesh=None, fixed=None,
        init=None, knots=None, **opt):
    """Assemble, optimise and return the :class:`PosteriorFit` of ``spec``."""
    try:
        model = assemble_model(spec, data, subsample, mesh, priors, fixed, init, knots)
    except EmberError:
        raise
    except Exception as exc:
        raise FitError(str(exc), stage="assemble") from exc
    return fit_model(model, seed=seed, spec_digest=spec.digest(),
                     data_digest=data_digest(data, subsample), **opt)


@dataclass
class HyperGrid:
    points: np.ndarray          # (K, d) transformed scale
    weights: np.ndarray         # (K,), sums to one
    modes: list
    precisions: list
    log_values: np.ndarray

    def mean_latent(self):
        return np.sum(self.weights[:, None] * np.asarray(self.modes), axis=0)


def integrate_hyperparameters(model, fit, n_per_dim=7, span=3.0, hessian=None):
    """Coarse grid integration over at most three free hyperparameters.

    The grid is laid out along the eigenvectors of the objective's negative
    Hessian at ``fit.theta``, ``span`` standard deviations either side, and
    each point is weighted by its Laplace objective.
    """
    theta = np.asarray(fit.theta, dtype=float)
    d = len(theta)
    if d == 0 or d > 3:
        raise ValueError("grid integration supports one to three free hyperparameters")
    H = hessian if hessian is not None else fit.hessian
    if H is None:
        H = fd_hessian(lambda t: -laplace_log_marginal(model, t, x0=fit.mode), theta)
    ev, V = np.linalg.eigh(0.5 * (H + H.T))
    if ev.min() <= 0:
        raise FitError("objective Hessian is not positive definite at the optimum",
                       stage="integrate")
    z = np.linspace(-span, span, n_per_dim)
    pts, vals, modes, precs = [], [], [], []
    for zz in product(z, repeat=d):
        t = theta + V @ (np.asarray(zz) / np.sqrt(ev))
        try:
            val, ga = laplace_log_marginal(model, t, x0=fit.mode, return_approx=True)
        except EmberError:
            continue
        pts.append(t)
        vals.append(val)
        modes.append(ga.mode)
        precs.append(ga.precision)
    vals = np.asarray(vals)
    w = np.exp(vals - vals.max())
    w /= w.sum()
    return HyperGrid(np.asarray(pts), w, modes, precs, vals)
