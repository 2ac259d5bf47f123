"""Posterior predictive simulation of counts and sizes, and aggregation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..errors import DataError, ModelSpecError
from ..inference.fit import sample_posterior
from ..inference.model import _covariates
from ..marked_pp import draw_sizes
from ..synthetic import draw_size_family

MIXTURE = ("BIN", "BETA", "GPD")


@dataclass
class PredictiveSamples:
    """``values[i, j]``: draw ``j`` for target ``i`` (a pixel-day or an
    event slot, given by ``rows`` into the table)."""

    values: np.ndarray
    kind: str
    rows: np.ndarray

    def __post_init__(self):
        v = self.values
        if self.kind == "size" and v.size and not np.all(v > 1):
            raise ValueError("size draws must exceed 1 ha")
        if self.kind in ("count", "burnt_area") and v.size and not np.all(v >= 0):
            raise ValueError(f"{self.kind} draws must be non-negative")

    @property
    def n_draws(self):
        return self.values.shape[1]

    def quantile(self, q):
        return np.quantile(self.values, q, axis=1)


@dataclass
class GroupedSamples:
    groups: np.ndarray          # sorted unique labels
    values: np.ndarray          # (n_groups, n_draws)
    kind: str

    def quantile(self, q):
        return np.quantile(self.values, q, axis=1)


def _seeds(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(2)


def latent_draws(fit, n, seed, grid=None):
    return sample_posterior(fit, n, seed, grid=grid)


def component_predictors(fit, table, rows, X, comps=None):
    """Predictor draws ``(len(rows), n)`` per component (COX per unit volume)."""
    cols = _covariates(table, rows)
    lay = fit.layout
    comps = lay.spec.component_names if comps is None else comps
    return {c: np.asarray(lay.component_design(c, cols, fit.hyper) @ X.T) for c in comps}


def _size_model(fit):
    names = fit.layout.spec.component_names
    if "SIZE" in names:
        return "SIZE"
    if all(c in names for c in MIXTURE):
        return "mixture"
    raise ModelSpecError("model has no size components (needs SIZE or BIN, BETA and GPD)")


def _draw_marks(rng, kind, fit, eta, u, p_exc=None):
    """Size draws for predictor matrices in ``eta`` (all the same shape)."""
    hv = fit.hyper
    if kind == "SIZE":
        e = eta["SIZE"]
        fam = fit.layout.spec.component("SIZE").family
        ex = draw_size_family(rng, fam, e.ravel(), hv["SIZE.phi"]).reshape(e.shape)
        return 1.0 + np.maximum(ex, 1e-9)
    if u is None:
        raise ValueError("threshold u is required for mixture size models")
    shape = eta["BIN"].shape
    p = expit(eta["BIN"]) if p_exc is None else np.broadcast_to(np.asarray(p_exc, float), shape)
    mean = np.clip(expit(eta["BETA"]), 1e-12, 1 - 1e-12)
    y, _ = draw_sizes(rng, int(np.prod(shape)), p.ravel(), mean.ravel(), hv["BETA.phi"],
                      np.exp(eta["GPD"]).ravel(), hv["GPD.xi"], float(u))
    return y.reshape(shape)


def predictive_sizes(fit, table, rows, n, seed, u=None, p_exc=None, grid=None, latent=None):
    """Size draws (ha) for event slots at pixel-day ``rows`` of ``table``.

    Each draw uses one latent sample; the mark is drawn from the mixture
    (exceedance probability, Beta body, GPD tail) or from the SIZE family.

    Parameters
    ----------
    rows : int array
        Table row of each event slot (e.g. ``MarkedDataset.event_row``).
    p_exc : float or array, optional
        Overrides the exceedance probability of the mixture.
    latent : array (n, dim), optional
        Latent draws to use instead of sampling the fit.
    """
    kind = _size_model(fit)
    rows = np.asarray(rows, dtype=np.int64)
    s_lat, s_obs = _seeds(seed)
    X = latent_draws(fit, n, s_lat, grid) if latent is None else np.atleast_2d(latent)
    comps = ("SIZE",) if kind == "SIZE" else MIXTURE
    eta = component_predictors(fit, table, rows, X, comps)
    y = _draw_marks(np.random.default_rng(s_obs), kind, fit, eta, u, p_exc)
    return PredictiveSamples(y, "size", rows)


def predictive_counts(fit, table, rows=None, n=500, seed=0, u=None, with_burnt_area=False,
                      grid=None, latent=None):
    """Count draws per pixel-day; optionally burnt area from the same draws.

    Returns
    -------
    PredictiveSamples, or ``(counts, burnt_area)`` with ``with_burnt_area``.
    """
    rows = np.arange(len(table)) if rows is None else np.asarray(rows, dtype=np.int64)
    s_lat, s_obs = _seeds(seed)
    X = latent_draws(fit, n, s_lat, grid) if latent is None else np.atleast_2d(latent)
    n = X.shape[0]
    kind = _size_model(fit) if with_burnt_area else None
    comps = ["COX"] + ([] if kind is None else (["SIZE"] if kind == "SIZE" else list(MIXTURE)))
    eta = component_predictors(fit, table, rows, X, comps)
    rng = np.random.default_rng(s_obs)
    with np.errstate(over="ignore"):
        lam = np.exp(eta["COX"] + np.log(table.volume[rows])[:, None])
    if not np.all(np.isfinite(lam)):
        raise OverflowError("predicted intensity overflows")
    counts = rng.poisson(lam)
    out = PredictiveSamples(counts, "count", rows)
    if not with_burnt_area:
        return out
    ba = np.zeros(counts.shape)
    m = len(rows)
    for j in range(n):
        c = counts[:, j]
        tot = int(c.sum())
        if tot == 0:
            continue
        slot = np.repeat(np.arange(m), c)
        y = _draw_marks(rng, kind, fit, {k: v[slot, j] for k, v in eta.items() if k != "COX"}, u)
        ba[:, j] = np.bincount(slot, weights=y, minlength=m)
    return out, PredictiveSamples(ba, "burnt_area", rows)


# -- grouping ---------------------------------------------------------------------------

GROUPINGS = ("all", "year", "month", "cell", "year_month", "group", "group_year",
             "group_month", "group_year_month")


def group_labels(table, rows=None, by="year", cell_groups=None):
    """String label per row for a grouping of pixel-days.

    ``group*`` groupings map cells to regions (e.g. departements) through
    ``cell_groups``, a dict ``cell_id -> label``.
    """
    if by not in GROUPINGS:
        raise ValueError(f"unknown grouping {by!r}; expected one of {GROUPINGS}")
    rows = np.arange(len(table)) if rows is None else np.asarray(rows)
    yr = table.year[rows].astype(str)
    mo = np.char.zfill(table.month[rows].astype(str), 2)
    parts = []
    if by.startswith("group"):
        if cell_groups is None:
            raise ValueError(f"grouping {by!r} needs a cell-to-group mapping")
        cells = table.cell_id[rows]
        missing = sorted(set(np.unique(cells).tolist()) - set(cell_groups))
        if missing:
            raise DataError(f"unknown group label for cell_id={missing[0]}", field="cell_id")
        parts.append(np.array([str(cell_groups[c]) for c in cells.tolist()]))
    if by == "all":
        return np.full(len(rows), "all")
    if by == "cell":
        return table.cell_id[rows].astype(str)
    if "year" in by:
        parts.append(yr)
    if "month" in by:
        parts.append(mo)
    out = parts[0]
    for p in parts[1:]:
        out = np.char.add(np.char.add(out, "|"), p)
    return out


def aggregate(samples, labels):
    """Per-draw group sums of predictive samples.

    ``labels`` gives the group of every target of ``samples``.
    """
    labels = np.asarray(labels)
    v = samples.values
    if len(labels) != v.shape[0]:
        raise DataError(f"{len(labels)} labels for {v.shape[0]} targets")
    groups, inv = np.unique(labels, return_inverse=True)
    G = sp.csr_matrix((np.ones(len(inv)), (inv, np.arange(len(inv)))),
                      shape=(len(groups), len(inv)))
    vals = G @ v
    if np.issubdtype(v.dtype, np.integer):
        vals = np.rint(vals).astype(v.dtype)
    return GroupedSamples(groups, np.asarray(vals), samples.kind)


def observed_per_row(data, kind="burnt_area"):
    """Observed count or burnt area per pixel-day of ``data.table``."""
    if kind == "count":
        return data.table.count.astype(float)
    if kind == "burnt_area":
        return np.bincount(data.event_row, weights=data.burnt_area, minlength=len(data.table))
    raise ValueError(f"unknown kind {kind!r}")


def observed_totals(values, labels, groups):
    """Sums of ``values`` per label, ordered as ``groups``."""
    labels = np.asarray(labels)
    idx = {g: k for k, g in enumerate(np.asarray(groups).tolist())}
    out = np.zeros(len(idx))
    for lab, v in zip(labels.tolist(), np.asarray(values, float)):
        if lab not in idx:
            raise DataError(f"unknown group label {lab!r}")
        out[idx[lab]] += v
    return out


def interval_coverage(grouped, observed, lo=0.25, hi=0.75):
    """Fraction of observed group totals inside the predictive ``[lo, hi]``
    quantile interval, and the per-group indicator."""
    ql, qh = grouped.quantile(lo), grouped.quantile(hi)
    inside = (observed >= ql) & (observed <= qh)
    return float(np.mean(inside)), inside


def pit_values(samples, y, rng=None):
    """Randomised probability integral transform of ``y`` under each row of
    ``samples`` (ties split uniformly)."""
    s = np.asarray(samples, dtype=float)
    y = np.asarray(y, dtype=float)[:, None]
    below = np.mean(s < y, axis=1)
    eq = np.mean(s == y, axis=1)
    v = rng.uniform(size=len(below)) if rng is not None else 0.5
    return below + v * eq
