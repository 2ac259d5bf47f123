"""Generalized Pareto tail modelling and threshold-selection diagnostics."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConvergenceError, DataError, DegenerateDataError

log = logging.getLogger(__name__)

XI_ZERO = 1e-8          # |xi| below this uses the exponential limit
XI_BOUNDS = (-0.49, 2.0)
MIN_EXCESSES = 10


@dataclass(frozen=True)
class GpdParams:
    scale: float
    shape: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"GPD scale must be positive, got {self.scale}")

    @property
    def upper_bound(self):
        return -self.scale / self.shape if self.shape <= -XI_ZERO else np.inf


@dataclass(frozen=True)
class GpdFit:
    params: GpdParams
    se: tuple          # (se_scale, se_shape); nan when xi <= -0.5
    loglik: float
    n: int
    iterations: int


def _log1p_ratio(xi, t):
    """``log1p(xi t) / xi`` with the ``t`` limit at ``xi = 0``."""
    if abs(xi) < XI_ZERO:
        return t
    return np.log1p(xi * t) / xi


def gpd_sf(x, p):
    """Survival function ``(1 + xi x / sigma)_+^(-1/xi)`` of excesses ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("excesses must be non-negative")
    t = x / p.scale
    if abs(p.shape) < XI_ZERO:
        out = np.exp(-t)
    else:
        z = 1.0 + p.shape * t
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(z > 0, np.exp(-np.log1p(np.where(z > 0, p.shape * t, 0.0)) / p.shape), 0.0)
    return float(out) if out.ndim == 0 else out


def gpd_logpdf(x, p):
    """Log-density; ``-inf`` outside the support."""
    x = np.asarray(x, dtype=float)
    t = x / p.scale
    xi = p.shape
    if abs(xi) < XI_ZERO:
        out = np.where(x >= 0, -np.log(p.scale) - t, -np.inf)
    else:
        z = 1.0 + xi * t
        ok = (x >= 0) & (z > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(ok, -np.log(p.scale) - (1.0 + 1.0 / xi) * np.log1p(np.where(ok, xi * t, 0.0)),
                           -np.inf)
    return float(out) if out.ndim == 0 else out


def gpd_ppf(q, p):
    q = np.asarray(q, dtype=float)
    if abs(p.shape) < XI_ZERO:
        return -p.scale * np.log1p(-q)
    return p.scale * np.expm1(-p.shape * np.log1p(-q)) / p.shape


def gpd_rvs(p, size, rng):
    return gpd_ppf(rng.uniform(size=size), p)


def gpd_loglik(x, scale, shape):
    if not scale > 0:
        return -np.inf
    return float(np.sum(gpd_logpdf(x, GpdParams(scale, shape))))


def _grad(x, s, xi):
    """Gradient of the log-likelihood in (log sigma, xi)."""
    sigma = np.exp(s)
    t = x / sigma
    if abs(xi) < 1e-4:
        # series in xi avoids cancellation between the two terms below
        # d/ds of -log s - t - xi(t - t^2/2): -1 + t + xi(t - t^2)
        ds = np.sum(-1.0 + t + xi * (t - t ** 2))
        dxi = np.sum(-(t - t ** 2 / 2) - 2 * xi * (t ** 3 / 3 - t ** 2 / 2))
        return np.array([ds, dxi])
    z = 1.0 + xi * t
    ds = np.sum(-1.0 + (1.0 + 1.0 / xi) * xi * t / z)
    dxi = np.sum(np.log1p(xi * t) / xi ** 2 - (1.0 + 1.0 / xi) * t / z)
    return np.array([ds, dxi])


def _start(x):
    # probability-weighted moments (Hosking & Wallis)
    xs = np.sort(x)
    n = len(xs)
    b0 = xs.mean()
    b1 = np.sum(np.arange(n) / (n - 1) * xs) / n
    xi = 2.0 - b0 / (b0 - 2 * b1)
    sigma = 2 * b0 * b1 / (b0 - 2 * b1)
    xi = float(np.clip(xi, -0.4, 1.5)) if np.isfinite(xi) else 0.1
    if not (np.isfinite(sigma) and sigma > 0):
        sigma = b0
    if xi < 0:
        sigma = max(sigma, -xi * xs[-1] * 1.05)
    return np.log(sigma), xi


def gpd_fit_ml(excesses, min_n=MIN_EXCESSES, max_iter=200, tol=1e-9):
    """Maximum likelihood fit of the GPD to positive excesses.

    Newton iterations on ``(log sigma, xi)`` with backtracking, ``xi`` kept in
    ``[-0.49, 2]``.  Standard errors come from the inverse observed
    information (reported when ``xi > -0.5``).

    Raises
    ------
    DegenerateDataError
        Fewer than ``min_n`` excesses, or all excesses equal.
    ConvergenceError
        No convergence within ``max_iter`` iterations.
    """
    x = np.asarray(excesses, dtype=float)
    if len(x) < min_n:
        raise DegenerateDataError(f"need at least {min_n} excesses, got {len(x)}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise DataError("excesses must be finite and non-negative")
    if np.ptp(x) == 0:
        raise DegenerateDataError("all excesses are equal; the likelihood is unbounded")
    lo, hi = XI_BOUNDS
    xmax = x.max()

    def f(th):
        return gpd_loglik(x, np.exp(th[0]), th[1])

    th = np.array(_start(x))
    fx = f(th)
    if not np.isfinite(fx):
        th = np.array([np.log(x.mean()), 0.1])
        fx = f(th)
    scale = np.sqrt(len(x))
    for it in range(1, max_iter + 1):
        g = _grad(x, *th)
        H = _num_hessian(x, th)
        free = np.ones(2, dtype=bool)
        # active bound on xi: drop it from the Newton system
        if (th[1] <= lo + 1e-12 and g[1] < 0) or (th[1] >= hi - 1e-12 and g[1] > 0):
            free[1] = False
        gf = g[free]
        if np.max(np.abs(gf)) < tol * scale:
            break
        Hf = H[np.ix_(free, free)]
        try:
            w, V = np.linalg.eigh(-Hf)
            w = np.maximum(w, 1e-8 * max(1.0, np.abs(w).max()))
            step_f = V @ ((V.T @ gf) / w)
        except np.linalg.LinAlgError:
            step_f = gf / max(1.0, np.abs(gf).max())
        step = np.zeros(2)
        step[free] = step_f
        big = np.abs(step).max()
        if big > 1.0:          # trust-region style cap on (log sigma, xi) moves
            step /= big
        t = 1.0
        for _ in range(60):
            cand = th + t * step
            cand[1] = np.clip(cand[1], lo, hi)
            if cand[1] < 0 and 1 + cand[1] * xmax / np.exp(cand[0]) <= 0:
                t *= 0.5
                continue
            fc = f(cand)
            if np.isfinite(fc) and fc >= fx - 1e-12 * abs(fx):
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(cand - th))
        th, fx = cand, fc
        if moved < 1e-12:
            break
    else:
        raise ConvergenceError(f"GPD fit did not converge in {max_iter} iterations")
    sigma, xi = float(np.exp(th[0])), float(th[1])
    se = (np.nan, np.nan)
    if xi > -0.5:
        H = _num_hessian_sigma(x, sigma, xi)
        try:
            cov = np.linalg.inv(-H)
            if np.all(np.diag(cov) > 0):
                se = (float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])))
        except np.linalg.LinAlgError:
            pass
    return GpdFit(GpdParams(sigma, xi), se, fx, len(x), it)


def _num_hessian(x, th, h=1e-5):
    H = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        H[:, j] = (_grad(x, *(th + e)) - _grad(x, *(th - e))) / (2 * h)
    return 0.5 * (H + H.T)


def _num_hessian_sigma(x, sigma, xi):
    """Observed information in (sigma, xi) from the (log sigma, xi) Hessian."""
    th = np.array([np.log(sigma), xi])
    Hl = _num_hessian(x, th)
    g = _grad(x, *th)
    J = np.diag([1.0 / sigma, 1.0])
    H = J @ Hl @ J
    H[0, 0] -= g[0] / sigma ** 2
    return H


def scale_from_median(median, xi):
    """GPD scale whose median equals ``median`` for shape ``xi``."""
    median = np.asarray(median, dtype=float)
    if abs(xi) < XI_ZERO:
        out = median / np.log(2.0)
    else:
        out = xi * median / np.expm1(xi * np.log(2.0))
    return float(out) if out.ndim == 0 else out


def tail_cdf(x, u, p_exc, p):
    """``1 - p_exc * gpd_sf(x - u)`` for ``x > u``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= u):
        raise ValueError("tail_cdf requires x > u")
    if not 0 < p_exc < 1:
        raise ValueError("p_exc must lie in (0, 1)")
    return 1.0 - p_exc * gpd_sf(x - u, p)


@dataclass
class ThresholdDiagnostics:
    thresholds: np.ndarray
    n_exceed: np.ndarray
    xi_hat: np.ndarray = None
    xi_se: np.ndarray = None
    mean_excess: np.ndarray = None
    me_lo: np.ndarray = None
    me_hi: np.ndarray = None
    p_value: np.ndarray = None
    errors: dict = None

    def xi_ci(self, level=0.95):
        z = stats.norm.ppf(0.5 + level / 2)
        return self.xi_hat - z * self.xi_se, self.xi_hat + z * self.xi_se

    def to_rows(self):
        m = len(self.thresholds)
        cols = {}
        for name in ("xi_hat", "xi_se", "mean_excess", "me_lo", "me_hi", "p_value"):
            v = getattr(self, name)
            cols[name] = np.full(m, np.nan) if v is None else v
        for k in range(m):
            yield {"threshold": float(self.thresholds[k]), "n_exceed": int(self.n_exceed[k]),
                   **{c: float(cols[c][k]) for c in cols}}


def _check_thresholds(thresholds):
    v = np.asarray(thresholds, dtype=float)
    if v.ndim != 1 or len(v) == 0 or np.any(np.diff(v) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    return v


def default_thresholds(start=5.0, step=5.0, count=40):
    return start + step * np.arange(count)


def mean_excess_curve(data, thresholds, level=0.95, min_exceed=5):
    """Empirical mean excess ``E[Y - v | Y > v]`` with normal-approximation CIs."""
    y = np.asarray(data, dtype=float)
    v = _check_thresholds(thresholds)
    if v[-1] >= y.max():
        raise DataError(f"threshold {v[-1]} is not below the data maximum {y.max()}")
    z = stats.norm.ppf(0.5 + level / 2)
    n = np.empty(len(v), dtype=np.int64)
    me, lo, hi = (np.empty(len(v)) for _ in range(3))
    for k, vk in enumerate(v):
        exc = y[y > vk] - vk
        n[k] = len(exc)
        if len(exc) < min_exceed:
            raise DataError(f"threshold {vk} leaves {len(exc)} exceedances (< {min_exceed})")
        me[k] = exc.mean()
        half = z * exc.std(ddof=1) / np.sqrt(len(exc))
        lo[k], hi[k] = me[k] - half, me[k] + half
    return ThresholdDiagnostics(v, n, mean_excess=me, me_lo=lo, me_hi=hi)


def threshold_stability(data, thresholds, min_n=MIN_EXCESSES):
    """ML shape estimates above each threshold.  Failed fits are recorded
    in ``errors`` and leave NaN entries."""
    y = np.asarray(data, dtype=float)
    v = _check_thresholds(thresholds)
    xi, se = np.full(len(v), np.nan), np.full(len(v), np.nan)
    n = np.empty(len(v), dtype=np.int64)
    errors = {}
    for k, vk in enumerate(v):
        exc = y[y > vk] - vk
        n[k] = len(exc)
        try:
            fit = gpd_fit_ml(exc, min_n=min_n)
        except (DegenerateDataError, ConvergenceError) as exc_err:
            errors[float(vk)] = str(exc_err)
            continue
        xi[k], se[k] = fit.params.shape, fit.se[1]
    return ThresholdDiagnostics(v, n, xi_hat=xi, xi_se=se, errors=errors)


# -- piecewise GPD model for the Northrop-Coleman test -----------------------

class _PiecewiseGpd:
    """Piecewise GPD above ``v[0]`` with shapes changing at each threshold.

    The scale at each threshold follows from the previous interval's
    threshold-stability relation ``sigma_{j+1} = sigma_j + xi_j L_j``, so
    the density is the one of a single GPD when all shapes are equal.
    """

    def __init__(self, y, v):
        self.v = v
        self.L = np.diff(v)
        m = len(v)
        self.m = m
        # interval of each point: v_j < y <= v_{j+1}
        idx = np.clip(np.searchsorted(v, y, side="left") - 1, 0, m - 1)
        self.idx = idx
        self.exc = y - v[idx]
        self.counts = np.bincount(idx, minlength=m).astype(float)
        # number of points passing beyond the end of each bounded interval
        self.n_beyond = (len(y) - np.cumsum(self.counts))[:-1]

    @staticmethod
    def _terms(xi, t):
        """``log1p(xi t)/xi``, its xi-derivative and ``t/(1+xi t)``."""
        z = 1.0 + xi * t
        small = np.abs(xi) < 1e-6
        if not np.any(small):
            lz = np.log1p(xi * t)
            return lz / xi, (t / z - lz / xi) / xi, t / z
        xs = np.where(small, 1.0, xi)
        lz = np.log1p(np.where(small, 0.0, xi) * t)
        a = np.where(small, t - xi * t ** 2 / 2, lz / xs)
        da = np.where(small, -t ** 2 / 2 + 2 * xi * t ** 3 / 3, -lz / xs ** 2 + t / (xs * z))
        return a, da, t / z

    def negll(self, params):
        """Negative log-likelihood and gradient in (log sigma_1, xi_1..xi_m)."""
        xis = params[1:]
        m = self.m
        sig = np.empty(m)
        sig[0] = np.exp(params[0])
        sig[1:] = sig[0] + np.cumsum(xis[:-1] * self.L)
        if np.any(sig <= 0):
            return np.inf, None
        # density terms: log s + (1 + xi) * log1p(xi t)/xi
        xi_p, s_p = xis[self.idx], sig[self.idx]
        t = self.exc / s_p
        if np.any(1.0 + xi_p * t <= 0):
            return np.inf, None
        a, da, r = self._terms(xi_p, t)
        f = np.sum(np.log(sig) * self.counts) + np.sum((1 + xi_p) * a)
        # d/ds of (1+xi) a(xi, x/s) = -(1+xi) r / s
        dsig = self.counts / sig - np.bincount(self.idx, (1 + xi_p) * r / s_p, minlength=m)
        dxi = np.bincount(self.idx, a + (1 + xi_p) * da, minlength=m)
        # survival beyond bounded interval j: n_beyond * log1p(xi t)/xi
        tb = self.L / sig[:-1]
        xb = xis[:-1]
        if np.any(1.0 + xb * tb <= 0):
            return np.inf, None
        ab, dab, rb = self._terms(xb, tb)
        f += np.sum(self.n_beyond * ab)
        dsig[:-1] -= self.n_beyond * rb / sig[:-1]
        dxi[:-1] += self.n_beyond * dab
        # chain rule through sigma_{j+1} = sigma_j + xi_j L_j, backwards
        acc = np.cumsum(dsig[::-1])[::-1]
        dxi[:-1] += acc[1:] * self.L
        grad = np.concatenate([[acc[0] * sig[0]], dxi])
        return f, grad


def _fit_piecewise(model, x0, max_iter=1000):
    from scipy.optimize import minimize

    res = minimize(model.negll, x0, jac=True, method="L-BFGS-B",
                   bounds=[(None, None)] + [XI_BOUNDS] * model.m,
                   options=dict(maxiter=max_iter, ftol=1e-12, gtol=1e-6))
    return res.fun, res.x


def northrop_coleman_test(data, thresholds, min_per_interval=5, starts=None):
    """Likelihood-ratio p-values for a common GPD shape above each threshold.

    For each starting threshold ``v_k`` the data above ``v_k`` are fitted by
    the piecewise GPD with one shape per interval ``(v_j, v_{j+1}]``
    (``v_{m+1} = inf``) and by a single GPD; ``2 (l_alt - l_null)`` is
    referred to a chi-square with ``m - k`` degrees of freedom.  ``p = 1``
    for the last threshold.  ``starts`` optionally restricts the test to
    some starting indices; the other entries are NaN.
    """
    y = np.asarray(data, dtype=float)
    v = _check_thresholds(thresholds)
    m = len(v)
    if m < 2:
        raise ValueError("at least two thresholds are required")
    idx = np.searchsorted(v, y[y > v[0]], side="left") - 1
    counts = np.bincount(np.clip(idx, 0, m - 1), minlength=m)
    if np.any(counts == 0):
        raise DataError(f"empty interval above threshold {v[np.argmax(counts == 0)]}")
    if np.any(counts < min_per_interval):
        log.warning("some intervals hold fewer than %d points", min_per_interval)
    todo = np.arange(m) if starts is None else np.unique(np.asarray(starts, dtype=int))
    p = np.full(m, np.nan)
    p[todo[todo == m - 1]] = 1.0
    warm = None
    for k in todo[todo < m - 1]:
        exc = y[y > v[k]]
        null = gpd_fit_ml(exc - v[k], min_n=2)
        l0 = null.loglik
        model = _PiecewiseGpd(exc, v[k:])
        x_null = np.concatenate([[np.log(null.params.scale)], np.full(model.m, null.params.shape)])
        nll, x = _fit_piecewise(model, x_null)
        if warm is not None and k > 0 and k - 1 in todo:
            # the previous alternative restricted to v_k onwards is a second start
            nll_w, x_w = _fit_piecewise(model, warm)
            if nll_w < nll:
                nll, x = nll_w, x_w
        sig1 = np.exp(x[0]) + x[1] * model.L[0] if model.m > 1 else np.nan
        warm = np.concatenate([[np.log(sig1)], x[2:]]) if sig1 > 0 else None
        l1 = max(-nll, l0)
        p[k] = float(stats.chi2.sf(2.0 * (l1 - l0), df=m - 1 - k))
    return p


def diagnose_threshold(data, thresholds):
    """Mean excess, shape stability and test p-values on one threshold grid."""
    me = mean_excess_curve(data, thresholds)
    st = threshold_stability(data, thresholds)
    pv = northrop_coleman_test(data, thresholds)
    return ThresholdDiagnostics(me.thresholds, me.n_exceed, st.xi_hat, st.xi_se,
                                me.mean_excess, me.me_lo, me.me_hi, pv, st.errors)
