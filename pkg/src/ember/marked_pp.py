"""Discretised log-Gaussian Cox process with moderate/extreme marks.

Linear predictors are stored per unit volume; ``log |A|`` is added when
counts are evaluated or simulated.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, log1p

from .extremes import scale_from_median
from .grid_data import FireEventList, attach_marks


def expected_count(mu, volume, per_unit=True):
    """Poisson mean of a pixel-day.

    ``per_unit=True`` reads ``mu`` as a log-intensity per km2 day and
    multiplies by ``volume``; otherwise ``mu`` already contains ``log volume``.
    """
    mu = np.asarray(mu, dtype=float)
    volume = np.asarray(volume, dtype=float)
    if np.any(volume <= 0):
        raise ValueError("volume must be positive")
    with np.errstate(over="ignore"):
        lam = np.exp(mu + np.log(volume)) if per_unit else np.exp(mu)
    if not np.all(np.isfinite(lam)):
        raise OverflowError("expected count overflows to infinity")
    return float(lam) if lam.ndim == 0 else lam


def thinning_probability(lam1, lam2):
    """Probability ``lam2 / (lam1 + lam2)`` that a point belongs to process 2."""
    lam1 = np.asarray(lam1, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    if np.any(lam1 <= 0) or np.any(lam2 < 0):
        raise ValueError("intensities must be positive")
    out = lam2 / (lam1 + lam2)
    return float(out) if out.ndim == 0 else out


def _log1pexp(x):
    # log(1 + e^x) without overflow
    return np.where(x > 0, x + log1p(np.exp(-np.abs(x))), log1p(np.exp(np.minimum(x, 0.0))))


def extreme_log_intensity(mu_cox, mu_bin, approximate=False):
    """Log-intensity of the extreme sub-process.

    Exact: ``mu_bin + mu_cox - log(1 + exp(mu_bin))``.  With
    ``approximate=True`` the small-probability form ``mu_bin + mu_cox``.
    """
    mu_cox = np.asarray(mu_cox, dtype=float)
    mu_bin = np.asarray(mu_bin, dtype=float)
    out = mu_bin + mu_cox
    if not approximate:
        out = out - _log1pexp(mu_bin)
    return float(out) if out.ndim == 0 else out


def moderate_log_intensity(mu_cox, mu_bin):
    """Log-intensity of the moderate sub-process, ``mu_cox - log(1 + exp(mu_bin))``."""
    out = np.asarray(mu_cox, dtype=float) - _log1pexp(np.asarray(mu_bin, dtype=float))
    return float(out) if out.ndim == 0 else out


def _broadcast(name, v, n):
    a = np.broadcast_to(np.asarray(v, dtype=float), (n,))
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def draw_sizes(rng, n_events, p_exc, beta_mean, beta_phi, gpd_median, xi, u):
    """Mixture mark draws for ``n_events`` slots with per-slot parameters.

    Returns ``(y, r)``: sizes in ha and exceedance indicators.
    """
    p_exc = np.broadcast_to(np.asarray(p_exc, dtype=float), (n_events,))
    mean = np.broadcast_to(np.asarray(beta_mean, dtype=float), (n_events,))
    phi = np.broadcast_to(np.asarray(beta_phi, dtype=float), (n_events,))
    med = np.broadcast_to(np.asarray(gpd_median, dtype=float), (n_events,))
    if np.any((mean <= 0) | (mean >= 1)) or np.any(phi <= 0):
        raise ValueError("Beta parameters need mean in (0, 1) and precision > 0")
    if np.any(med <= 0):
        raise ValueError("GPD median must be positive")
    if np.any((p_exc < 0) | (p_exc > 1)):
        raise ValueError("exceedance probabilities must lie in [0, 1]")
    r = rng.uniform(size=n_events) < p_exc
    y = np.empty(n_events)
    b = rng.beta(mean * phi, (1 - mean) * phi)
    y[~r] = 1.0 + b[~r] * (u - 1.0)
    q = rng.uniform(size=n_events)
    sigma = scale_from_median(med, xi)
    exc = sigma * (np.expm1(-xi * log1p(-q)) / xi if abs(xi) >= 1e-8 else -log1p(-q))
    # keep extreme marks strictly above u
    y[r] = np.maximum(u + exc[r], np.nextafter(u, np.inf))
    # keep moderate marks strictly above 1 ha
    y[~r] = np.maximum(y[~r], np.nextafter(1.0, 2.0))
    return y, r.astype(np.int8)


def simulate_marked_process(table, mu_cox, mu_bin, beta_mean, beta_phi, gpd_median, xi, u,
                            seed, per_unit=True):
    """Forward simulation of counts and marks on the pixel-days of ``table``.

    Parameters
    ----------
    table : PixelDayTable
        Supplies volumes and keys; its counts are replaced.
    mu_cox, mu_bin : array_like
        Per pixel-day log-intensity and exceedance logit.
    beta_mean, beta_phi : array_like
        Beta mean and precision of the transformed moderate marks.
    gpd_median : array_like
        Median of the GPD excess.
    xi : float
        GPD shape.
    u : float
        Threshold (ha), ``u > 1``.

    Returns
    -------
    MarkedDataset
    """
    if not u > 1:
        raise ValueError("threshold must exceed 1 ha")
    n = len(table)
    mu_cox = _broadcast("mu_cox", mu_cox, n)
    mu_bin = _broadcast("mu_bin", mu_bin, n)
    rng = np.random.default_rng(seed)
    lam = expected_count(mu_cox, table.volume, per_unit=per_unit)
    counts = rng.poisson(lam)
    rows = np.repeat(np.arange(n), counts)
    p = expit(mu_bin)
    bm = np.broadcast_to(np.asarray(beta_mean, dtype=float), (n,))[rows]
    bp = np.broadcast_to(np.asarray(beta_phi, dtype=float), (n,))[rows]
    gm = np.broadcast_to(np.asarray(gpd_median, dtype=float), (n,))[rows]
    y, _ = draw_sizes(rng, len(rows), p[rows], bm, bp, gm, float(xi), float(u))
    events = FireEventList(np.arange(len(rows)), table.cell_id[rows], table.day_index[rows], y)
    return attach_marks(table.with_counts(counts), events, u)


def gpd_mean_excess(params):
    """Mean of a GPD excess (infinite for ``xi >= 1``)."""
    if params.shape >= 1:
        return np.inf
    return params.scale / (1.0 - params.shape)

