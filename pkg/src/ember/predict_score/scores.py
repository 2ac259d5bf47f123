"""Proper scores, WAIC and the sign-flip permutation test.

All scores here are positively oriented as computed (higher is better for
``scrps``; Brier is a loss).  :func:`report_orientation` converts to the
"lower is better" convention used when writing results.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata


def _mean_abs_pairs(s):
    """Off-diagonal mean of ``|X_i - X_j|`` along the last axis."""
    n = s.shape[-1]
    srt = np.sort(s, axis=-1)
    k = np.arange(1, n + 1)
    # sum_{i<j} (x_(j) - x_(i)) = sum_k x_(k) (2k - n - 1)
    tot = np.sum(srt * (2 * k - n - 1), axis=-1)
    return 2.0 * tot / (n * (n - 1))


def scrps(samples, y):
    """Scaled CRPS estimated from predictive samples.

    ``-E|X - y| / E|X - X'| - 0.5 log E|X - X'|`` with the pair term taken
    over distinct sample pairs.  ``samples`` has shape ``(..., n)`` and ``y``
    broadcasts against ``samples.shape[:-1]``.  Higher is better.

    Raises
    ------
    ValueError
        Fewer than two samples, or zero predictive dispersion.
    """
    s = np.asarray(samples, dtype=float)
    y = np.asarray(y, dtype=float)
    if s.ndim == 0 or s.shape[-1] < 2:
        raise ValueError("scrps needs at least two samples")
    exx = _mean_abs_pairs(s)
    if np.any(exx <= 0):
        raise ValueError("zero dispersion in predictive samples")
    exy = np.mean(np.abs(s - y[..., None]), axis=-1)
    out = -exy / exx - 0.5 * np.log(exx)
    return float(out) if out.ndim == 0 else out


def crps(samples, y):
    """Sample CRPS ``E|X - y| - 0.5 E|X - X'|`` (a loss; lower is better)."""
    s = np.asarray(samples, dtype=float)
    y = np.asarray(y, dtype=float)
    if s.shape[-1] < 2:
        raise ValueError("crps needs at least two samples")
    out = np.mean(np.abs(s - y[..., None]), axis=-1) - 0.5 * _mean_abs_pairs(s)
    return float(out) if out.ndim == 0 else out


def brier(probs, outcomes):
    """Mean squared difference between probabilities and binary outcomes."""
    p = np.asarray(probs, dtype=float).ravel()
    o = np.asarray(outcomes, dtype=float).ravel()
    if p.shape != o.shape:
        raise ValueError(f"length mismatch: {p.size} probabilities, {o.size} outcomes")
    if p.size == 0:
        raise ValueError("empty input")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any((o != 0) & (o != 1)):
        raise ValueError("outcomes must be binary")
    return float(np.mean((p - o) ** 2))


def auc(scores, labels):
    """Area under the ROC curve by the Mann-Whitney rank statistic.

    Ties between a positive and a negative score count one half.
    """
    s = np.asarray(scores, dtype=float).ravel()
    lab = np.asarray(labels).ravel()
    if s.shape != lab.shape:
        raise ValueError(f"length mismatch: {s.size} scores, {lab.size} labels")
    pos = lab.astype(bool)
    if np.any((lab != 0) & (lab != 1)):
        raise ValueError("labels must be binary")
    n1 = int(pos.sum())
    n0 = len(pos) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("auc needs both classes among the labels")
    r = rankdata(s)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def waic(loglik, return_terms=False):
    """Widely applicable information criterion.

    Parameters
    ----------
    loglik : array, shape (n_samples, n_obs)
        Pointwise log-likelihood over posterior draws.

    Returns
    -------
    float
        ``-2 (lppd - p_waic)``; with ``return_terms`` also a dict holding
        ``lppd`` and ``p_waic``.
    """
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise ValueError("loglik must be (n_samples, n_obs)")
    if not np.all(np.isfinite(ll)):
        raise ValueError("loglik has non-finite entries")
    S = ll.shape[0]
    lppd = float(np.sum(logsumexp(ll, axis=0) - np.log(S)))
    p = float(np.sum(np.var(ll, axis=0, ddof=1))) if S > 1 else 0.0
    w = -2.0 * (lppd - p)
    if return_terms:
        return w, {"lppd": lppd, "p_waic": p}
    return w


def permutation_test(diffs, n_perm=2000, seed=0):
    """One-sided sign-flip test that the mean score difference is negative.

    Returns ``(1 + #{flipped mean <= observed mean}) / (n_perm + 1)``.
    """
    d = np.asarray(diffs, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("permutation_test needs at least one observation")
    if not np.all(np.isfinite(d)):
        raise ValueError("score differences must be finite")
    rng = np.random.default_rng(seed)
    stat = d.mean()
    tol = 1e-12 * max(1.0, np.abs(d).mean())
    hits = 0
    chunk = max(1, int(2e6 // d.size))
    left = int(n_perm)
    while left > 0:
        m = min(chunk, left)
        signs = rng.integers(0, 2, size=(m, d.size), dtype=np.int8) * 2 - 1
        hits += int(np.sum(signs @ d / d.size <= stat + tol))
        left -= m
    return (1 + hits) / (int(n_perm) + 1)


def report_orientation(name, value):
    """Score as written to results: negated where the raw score is
    positively oriented, so that lower is always better."""
    return -value if name.lower().startswith("scrps") else value
