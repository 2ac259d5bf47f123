"""Per-observation negative log-likelihoods and their eta-derivatives."""
from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, psi

from ..errors import DataError

LOG2PI = np.log(2 * np.pi)

# family -> name of its dispersion/shape hyperparameter (None: no hyperparameter)
FAMILY_HYPER = {"poisson": None, "bernoulli": None, "beta": "phi", "gpd": "xi",
                "gamma": "phi", "lognormal": "phi", "gaussian": "prec"}


def _trigamma(x, shift=10):
    """psi'(x) for x > 0: recurrence up to ``x + shift`` then the asymptotic
    series (relative error below 1e-12); several times faster than
    ``polygamma(1, x)``."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    with np.errstate(divide="ignore"):        # psi'(0) = inf, as polygamma
        for k in range(shift):
            acc += 1.0 / (x + k) ** 2
    z = x + shift
    iz2 = 1.0 / (z * z)
    tail = iz2 / z * (1 / 6 - iz2 * (1 / 30 - iz2 * (1 / 42 - iz2 / 30)))
    return acc + 1.0 / z + 0.5 * iz2 + tail


def _softplus(x):
    return np.logaddexp(0.0, x)


def check_support(family, y):
    y = np.asarray(y, dtype=float)
    ok = {
        "poisson": lambda: np.all((y >= 0) & (y == np.floor(y))),
        "bernoulli": lambda: np.all((y == 0) | (y == 1)),
        "beta": lambda: np.all((y > 0) & (y < 1)),
        "gpd": lambda: np.all(y >= 0),
        "gamma": lambda: np.all(y > 0),
        "lognormal": lambda: np.all(y > 0),
        "gaussian": lambda: np.all(np.isfinite(y)),
    }[family]()
    if not ok:
        raise DataError(f"observation outside the support of the {family} family")


def component_negloglik(family, eta, y, weight=1.0, hyper=None, check=True):
    """Negative log-likelihood with first and second derivatives in ``eta``.

    Parameters
    ----------
    family : str
        ``poisson`` (log link; ``eta`` includes any log-volume offset),
        ``bernoulli`` (logit), ``beta`` (logit mean, precision ``phi``),
        ``gpd`` (log median, shape ``xi``), ``gamma`` (log mean, shape
        ``phi``), ``lognormal`` (``log y ~ N(eta, 1/phi)``) or ``gaussian``
        (``y ~ N(eta, 1/prec)``).
    weight : float or array
        Likelihood weight multiplying every term.
    hyper : float
        The family's hyperparameter, when it has one.

    Returns
    -------
    value, d1, d2 : arrays
    """
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weight, dtype=float)
    if check:
        check_support(family, y)
    if family == "poisson":
        lam = np.exp(eta)
        v = lam - y * eta + gammaln(y + 1)
        d1, d2 = lam - y, lam
    elif family == "bernoulli":
        mu = expit(eta)
        v = _softplus(eta) - y * eta
        d1, d2 = mu - y, mu * (1 - mu)
    elif family == "beta":
        phi = float(hyper)
        mu = expit(eta)
        a, b = mu * phi, (1 - mu) * phi
        ly, l1y = np.log(y), np.log1p(-y)
        v = -(gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1) * ly + (b - 1) * l1y)
        var = mu * (1 - mu)
        T = psi(a) - psi(b) - (ly - l1y)
        d1 = phi * var * T
        d2 = phi * var * (1 - 2 * mu) * T + (phi * var) ** 2 * (_trigamma(a) + _trigamma(b))
    elif family == "gpd":
        xi = float(hyper)
        if abs(xi) < 1e-8:
            s = y * np.log(2.0) * np.exp(-eta)          # y / sigma
            v = eta - np.log(np.log(2.0)) + s
            d1, d2 = 1.0 - s, s
        else:
            logc = np.log(xi) - np.log(np.expm1(xi * np.log(2.0))) if xi > 0 else \
                np.log(-xi) - np.log(-np.expm1(xi * np.log(2.0)))
            s = xi * y * np.exp(-eta - logc)             # xi y / sigma
            if np.any(1 + s <= 0):
                raise DataError("GPD observation beyond the upper end point")
            k = 1.0 + 1.0 / xi
            v = eta + logc + k * np.log1p(s)
            d1 = 1.0 - k * s / (1 + s)
            d2 = k * s / (1 + s) ** 2
    elif family == "gamma":
        phi = float(hyper)
        r = y * np.exp(-eta)
        v = -phi * np.log(phi) + phi * eta + gammaln(phi) - (phi - 1) * np.log(y) + phi * r
        d1 = phi - phi * r
        d2 = phi * r
    elif family == "lognormal":
        phi = float(hyper)
        ly = np.log(y)
        e = ly - eta
        v = 0.5 * (LOG2PI - np.log(phi)) + 0.5 * phi * e ** 2 + ly
        d1 = -phi * e
        d2 = np.full_like(e, phi)
    elif family == "gaussian":
        prec = float(hyper)
        e = y - eta
        v = 0.5 * (LOG2PI - np.log(prec)) + 0.5 * prec * e ** 2
        d1 = -prec * e
        d2 = np.full_like(e, prec)
    else:
        raise ValueError(f"unknown family {family!r}")
    return w * v, w * d1, w * d2


def mean_response(family, eta, hyper=None):
    """Mean (or median for ``gpd``) on the response scale."""
    if family in ("poisson", "gamma"):
        return np.exp(eta)
    if family in ("bernoulli", "beta"):
        return expit(eta)
    if family == "gpd":
        return np.exp(eta)
    if family == "lognormal":
        return np.exp(eta + 0.5 / hyper)
    return eta
