"""Synthetic pixel-day domains and forward simulation from a latent layout.

Used by the ``simulate`` command and by simulation-based checks.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .gmrf import SparsePrecision, build_mesh_2d, sample_gmrf
from .grid_data import DEFAULT_SEASON, FireEventList, PixelDayTable, attach_marks
from .marked_pp import expected_count, simulate_marked_process

_DAYS_IN_MONTH = {1: 31, 2: 28, 3: 31, 4: 30, 5: 31, 6: 30, 7: 31, 8: 31, 9: 30, 10: 31,
                  11: 30, 12: 31}


def synthetic_table(nx=10, ny=10, n_days=200, cell_km=8.0, years=(2010, 2011),
                    season=DEFAULT_SEASON, seed=0, fwi_mean=12.0):
    """Regular grid of ``nx * ny`` cells observed on ``n_days`` season days.

    Days are split evenly over ``years``; within a year they run through the
    season months in order.  FWI combines a smooth daily regional signal, a
    fixed east-west gradient and pixel noise; FA is a per-cell constant.
    """
    rng = np.random.default_rng(seed)
    years = tuple(years)
    season = tuple(season)
    n_cells = nx * ny
    cx, cy = np.meshgrid((np.arange(nx) + 0.5) * cell_km, (np.arange(ny) + 0.5) * cell_km)
    cx, cy = cx.ravel(), cy.ravel()
    per_year = np.array_split(np.arange(n_days), len(years))
    year = np.empty(n_days, dtype=np.int64)
    month = np.empty(n_days, dtype=np.int64)
    span = np.array([_DAYS_IN_MONTH[m] for m in season], dtype=float)
    edges = np.cumsum(span) / span.sum()
    for y, days in zip(years, per_year):
        year[days] = y
        frac = (np.arange(len(days)) + 0.5) / max(len(days), 1)
        month[days] = np.asarray(season)[np.searchsorted(edges, frac)]
    # daily regional log-FWI: AR(1) plus a mid-season bump
    z = np.empty(n_days)
    z[0] = rng.normal()
    for t in range(1, n_days):
        z[t] = 0.8 * z[t - 1] + 0.6 * rng.normal()
    season_pos = np.concatenate([(np.arange(len(d)) + 0.5) / len(d) for d in per_year])
    level = np.log(fwi_mean) + 0.5 * np.sin(np.pi * season_pos) + 0.35 * z
    grad = 0.3 * (cx / cx.max() - 0.5)
    fa = rng.uniform(5.0, 95.0, n_cells)
    day = np.repeat(np.arange(n_days), n_cells)
    cell = np.tile(np.arange(n_cells), n_days)
    fwi = np.exp(level[day] + grad[cell] + 0.25 * rng.normal(size=len(day)))
    return PixelDayTable(cell_id=cell, day_index=day, year=year[day], month=month[day],
                         x_km=cx[cell], y_km=cy[cell], fwi=np.round(fwi, 4),
                         fa=np.round(fa[cell], 4), count=np.zeros(len(day), dtype=np.int64),
                         volume=np.full(len(day), cell_km ** 2), season=season)


def domain_mesh(table, max_edge=None, extension=None):
    """Mesh over the bounding square of the cell centres plus a band."""
    x, y = table.x_km, table.y_km
    half = 0.5 * np.min(np.diff(np.unique(x))) if len(np.unique(x)) > 1 else 1.0
    lo = np.array([x.min() - half, y.min() - half])
    hi = np.array([x.max() + half, y.max() + half])
    width = float(np.max(hi - lo))
    h = max_edge or width / 8
    ext = extension if extension is not None else width / 4
    box = np.array([lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    return build_mesh_2d(box, h, 2 * h, ext)


def draw_latent(layout, hv, seed, fixed_values=None):
    """Latent vector drawn from the prior at ``hv``.

    Intercepts and linear effects take their value from ``fixed_values``
    (default 0); any block named in ``fixed_values`` with an array value is
    set to that array instead of being drawn.
    """
    fixed_values = dict(fixed_values or {})
    x = np.zeros(layout.n)
    seeds = np.random.SeedSequence(seed).spawn(len(layout.blocks))
    for ss, b in zip(seeds, layout.blocks.values()):
        if b.name in fixed_values:
            x[b.slice] = np.broadcast_to(np.asarray(fixed_values.pop(b.name), float), (b.dim,))
            continue
        if b.kind in ("intercept", "linear"):
            continue
        Q, Qa, C = layout._block_prior(b, hv)
        prec = SparsePrecision(Q, C, intrinsic=b.kind == "rw1")
        x[b.slice] = sample_gmrf(prec, 1, ss)[0]
    if fixed_values:
        raise KeyError(f"unknown effect(s) {sorted(fixed_values)}")
    return x


def _cols(table, rows=None):
    from .inference.model import _covariates
    return _covariates(table, rows)


def predictors(layout, hv, x, table, rows=None):
    """Linear predictor of every component at the rows of ``table``
    (COX per unit volume)."""
    cols = _cols(table, rows)
    return {c: layout.component_design(c, cols, hv) @ x for c in layout.spec.component_names}


def draw_size_family(rng, family, eta, phi):
    """Excess over 1 ha for the SIZE families."""
    if family == "lognormal":
        return np.exp(eta + rng.standard_normal(len(eta)) / np.sqrt(phi))
    if family == "gamma":
        return rng.gamma(phi, np.exp(eta) / phi)
    raise ValueError(f"unsupported SIZE family {family!r}")


# mark parameters used when a layout has no mark components
DEFAULT_MARKS = dict(mu_bin=-3.0, beta_mean=0.3, beta_phi=5.0, gpd_median=30.0, xi=0.5)


def simulate_data(layout, hv, x, table, u, seed):
    """Counts and marks on ``table`` given latent ``x`` and hyperparameters.

    Returns
    -------
    MarkedDataset
    """
    eta = predictors(layout, hv, x, table)
    comps = layout.spec.component_names
    if "SIZE" in comps:
        rng = np.random.default_rng(seed)
        lam = expected_count(eta["COX"], table.volume)
        counts = rng.poisson(lam)
        rows = np.repeat(np.arange(len(table)), counts)
        fam = layout.spec.component("SIZE").family
        ex = draw_size_family(rng, fam, eta["SIZE"][rows], hv["SIZE.phi"])
        y = 1.0 + np.maximum(ex, 1e-9)
        events = FireEventList(np.arange(len(rows)), table.cell_id[rows], table.day_index[rows], y)
        return attach_marks(table.with_counts(counts), events, u)
    d = DEFAULT_MARKS
    mu_bin = eta["BIN"] if "BIN" in eta else d["mu_bin"]
    beta_mean = expit(eta["BETA"]) if "BETA" in eta else d["beta_mean"]
    beta_mean = np.clip(beta_mean, 1e-9, 1 - 1e-9)
    phi = hv.get("BETA.phi", d["beta_phi"])
    med = np.exp(eta["GPD"]) if "GPD" in eta else d["gpd_median"]
    xi = hv.get("GPD.xi", d["xi"])
    return simulate_marked_process(table, eta["COX"], mu_bin, beta_mean, phi, med, xi, u, seed)
