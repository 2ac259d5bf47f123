"""Stratified FWI-weighted subsampling of zero-count pixel-days.

Zero-count rows are partitioned by (cell, year).  Within a stratum each draw
picks a month uniformly among the months that still have rows, then an FWI
class (at/above or below the stratum's ``p_fwi`` quantile), then a row
uniformly within that month and class.  ``k`` rows are drawn without
replacement and every selected row is weighted by its exact inverse
first-order inclusion probability.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubsampleConfig:
    p_fwi: float = 0.7
    p_ss: float = 0.9
    k_per_stratum: int = 2
    seed: int = 0
    invert_fwi_classes: bool = False   # literal reading: mass p_ss below the quantile
    uniform: bool = False              # plain uniform draws within each stratum

    def __post_init__(self):
        if not 0 < self.p_fwi < 1:
            raise ValueError("p_fwi must lie in (0, 1)")
        if not 0 < self.p_ss < 1:
            raise ValueError("p_ss must lie in (0, 1)")
        if int(self.k_per_stratum) < 1:
            raise ValueError("k_per_stratum must be >= 1")

    @property
    def p_high(self):
        """Selection probability of the at/above-quantile class."""
        return 1.0 - self.p_ss if self.invert_fwi_classes else self.p_ss


@dataclass(frozen=True, eq=False)
class WeightedSubsample:
    """Selected table rows with inclusion probabilities and HT weights."""

    table: object
    rows: np.ndarray
    p_incl: np.ndarray

    @property
    def weight(self):
        return 1.0 / self.p_incl

    def __len__(self):
        return len(self.rows)

    def to_table(self):
        return self.table.subset(self.rows)


def _cell_probs(counts, p_high):
    """Probability of drawing from each (month, class) cell in one draw.

    ``counts`` has shape (months, 2) with class 0 = below, 1 = at/above.
    """
    counts = np.asarray(counts)
    tot = counts.sum(axis=1)
    live = tot > 0
    probs = np.zeros(counts.shape)
    for m in np.flatnonzero(live):
        lo, hi = counts[m]
        if lo > 0 and hi > 0:
            probs[m] = (1.0 - p_high, p_high)
        elif hi > 0:
            probs[m, 1] = 1.0
        else:
            probs[m, 0] = 1.0
    return probs / live.sum()


@lru_cache(maxsize=200_000)
def _expected_draws(counts, k, p_high):
    """Expected number of rows drawn from each cell in ``k`` sequential draws
    without replacement, starting from cell sizes ``counts`` (nested tuple)."""
    c = np.array(counts)
    if k == 0 or c.sum() == 0:
        return np.zeros(c.shape)
    probs = _cell_probs(c, p_high)
    out = np.zeros(c.shape)
    for m, h in zip(*np.nonzero(probs)):
        c2 = c.copy()
        c2[m, h] -= 1
        sub = _expected_draws(tuple(map(tuple, c2)), k - 1, p_high)
        out += probs[m, h] * sub
        out[m, h] += probs[m, h]
    return out


def inclusion_probabilities(month_idx, high, k, p_high):
    """Exact first-order inclusion probability of every row of one stratum.

    Parameters
    ----------
    month_idx : int array
        Month index (0-based) per row.
    high : bool array
        FWI class per row (True: at/above the quantile).
    """
    n_m = int(month_idx.max()) + 1
    counts = np.zeros((n_m, 2), dtype=np.int64)
    np.add.at(counts, (month_idx, high.astype(int)), 1)
    e = _expected_draws(tuple(map(tuple, counts)), int(k), float(p_high))
    with np.errstate(invalid="ignore", divide="ignore"):
        per_cell = np.where(counts > 0, e / np.maximum(counts, 1), 0.0)
    return np.minimum(per_cell[month_idx, high.astype(int)], 1.0)


def _draw(rng, month_idx, high, k, p_high):
    remaining = np.ones(len(month_idx), dtype=bool)
    chosen = []
    months = np.unique(month_idx)
    for _ in range(k):
        live = [m for m in months if np.any(remaining & (month_idx == m))]
        m = live[rng.integers(len(live))]
        in_m = remaining & (month_idx == m)
        has_hi = np.any(in_m & high)
        has_lo = np.any(in_m & ~high)
        if has_hi and has_lo:
            cls = rng.uniform() < p_high
        else:
            cls = bool(has_hi)
        pool = np.flatnonzero(in_m & (high == cls))
        j = pool[rng.integers(len(pool))]
        remaining[j] = False
        chosen.append(j)
    return np.array(chosen, dtype=np.int64)


def _strata(table, zero):
    idx = np.flatnonzero(zero)
    keys = np.stack([table.cell_id[idx], table.year[idx]], axis=1)
    order = np.lexsort((idx, keys[:, 1], keys[:, 0]))
    idx, keys = idx[order], keys[order]
    if len(idx) == 0:
        return []
    cut = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
    return np.split(idx, cut)


def stratified_subsample(table, cfg=SubsampleConfig()):
    """Subsample zero-count rows per (cell, year) stratum.

    Positive-count rows are always kept with weight 1.  Strata with at most
    ``k`` zero rows are kept whole; strata with constant FWI are sampled
    uniformly (``p = k / n``).

    Returns
    -------
    WeightedSubsample
        Rows in table order.
    """
    if len(table) == 0:
        raise DataError("cannot subsample an empty table")
    k = int(cfg.k_per_stratum)
    zero = table.count == 0
    rows = [np.flatnonzero(~zero)]
    probs = [np.ones(len(rows[0]))]
    strata = _strata(table, zero)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(strata))
    n_uniform = 0
    for ss, idx in zip(seeds, strata):
        n = len(idx)
        if n <= k:
            rows.append(idx)
            probs.append(np.ones(n))
            continue
        rng = np.random.default_rng(ss)
        fwi = table.fwi[idx]
        if cfg.uniform or np.ptp(fwi) == 0:
            n_uniform += not cfg.uniform
            sel = np.sort(rng.choice(n, size=k, replace=False))
            rows.append(idx[sel])
            probs.append(np.full(k, k / n))
            continue
        q = np.quantile(fwi, cfg.p_fwi)
        high = fwi >= q
        _, month_idx = np.unique(table.month[idx], return_inverse=True)
        p_all = inclusion_probabilities(month_idx, high, k, cfg.p_high)
        sel = np.sort(_draw(rng, month_idx, high, k, cfg.p_high))
        rows.append(idx[sel])
        probs.append(p_all[sel])
    if n_uniform:
        log.info("%d strata with constant FWI sampled uniformly", n_uniform)
    rows = np.concatenate(rows)
    probs = np.concatenate(probs)
    order = np.argsort(rows, kind="stable")
    return WeightedSubsample(table, rows[order], probs[order])


def weighted_poisson_negloglik(counts, weights, log_means):
    """``sum_k w_k (lambda_k - N_k log lambda_k + log N_k!)``."""
    counts = np.asarray(counts, dtype=float)
    weights = np.asarray(weights, dtype=float)
    log_means = np.asarray(log_means, dtype=float)
    if not (counts.shape == weights.shape == log_means.shape):
        raise ValueError("counts, weights and log-means must have equal length")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        terms = weights * (np.exp(log_means) - counts * log_means + gammaln(counts + 1))
    if not np.all(np.isfinite(terms)):
        raise FloatingPointError("non-finite Poisson likelihood term")
    return float(np.sum(terms))
