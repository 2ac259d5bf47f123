"""Latent Gaussian model assembly.

A :class:`LatentLayout` holds everything needed to map covariates to design
rows and hyperparameters to prior precisions (effect blocks, level sets,
knots, mesh, hyperparameter table).  A :class:`LatentModel` adds the
observations of every component.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import DataError, ModelSpecError
from ..gmrf import (MaternHyper, projector_1d, projector_2d, spde_precision_1d,
                    spde_precision_2d)
from ..gmrf.precision import rw1_structure, spline_constraint
from ..grid_data import transform_moderate_mark
from .families import FAMILY_HYPER, check_support, component_negloglik
from .priors import PriorConfig, log_exp_on_log, log_gamma_on_log, log_normal
from .spec import ModelSpec

log = logging.getLogger(__name__)

COVARIATE_COLUMNS = ("cell_id", "year", "month", "x_km", "y_km", "fwi", "fa")

FAMILY_INIT = {"xi": 0.5, "phi": 5.0, "prec": 1.0}


@dataclass
class Hyper:
    """One hyperparameter.  ``value`` is on the natural scale; ``prior`` is a
    serialisable tuple ``(kind, *params)`` giving a log density on the
    optimisation scale (log for positive quantities, identity otherwise)."""

    name: str
    transform: str
    value: float
    fixed: bool
    prior: tuple

    def to_t(self, v):
        return np.log(v) if self.transform == "log" else float(v)

    def from_t(self, t):
        return float(np.exp(t)) if self.transform == "log" else float(t)

    def logprior(self, t):
        kind, *p = self.prior
        if kind == "loggamma":
            return float(log_gamma_on_log(t, p[0], p[1]))
        if kind == "exp":
            return float(log_exp_on_log(t, p[0]))
        if kind == "normal":
            return float(log_normal(t, p[0]))
        if kind == "pc_range":
            r0, alpha, dim = p
            lr = -np.log(alpha) * r0 ** (dim / 2)
            return float(np.log(dim / 2 * lr) - (dim / 2) * t - lr * np.exp(-t * dim / 2))
        if kind == "pc_sd":
            s0, alpha = p
            ls = -np.log(alpha) / s0
            return float(np.log(ls) - ls * np.exp(t) + t)
        if kind == "flat":
            return 0.0
        raise ValueError(f"unknown prior kind {kind!r}")


@dataclass
class Block:
    """Contiguous slice of the latent vector owned by one effect."""

    name: str
    kind: str
    covariate: str | None
    start: int
    dim: int
    levels: list | None = None
    knots: list | None = None
    constraint: str | None = None
    hypers: dict = field(default_factory=dict)     # role -> hyper name

    @property
    def slice(self):
        return slice(self.start, self.start + self.dim)


def _level_index(levels, values, kind):
    levels = np.asarray(levels)
    values = np.asarray(values)
    pos = np.searchsorted(levels, values)
    pos_c = np.clip(pos, 0, len(levels) - 1)
    hit = levels[pos_c] == values
    if kind == "iid":
        # unseen levels of an exchangeable effect sit at the prior mean 0
        return np.where(hit, pos_c, -1)
    # ordered levels: clamp to the nearest known level
    lo = np.clip(pos - 1, 0, len(levels) - 1)
    nearest = np.where(np.abs(levels[lo] - values) <= np.abs(levels[pos_c] - values), lo, pos_c)
    return np.where(hit, pos_c, nearest)


def _onehot(idx, n):
    m = len(idx)
    ok = idx >= 0
    return sp.csr_matrix((np.ones(ok.sum()), (np.flatnonzero(ok), idx[ok])), shape=(m, n))


class LatentLayout:
    """Effect blocks, bases and hyperparameters of a :class:`ModelSpec`."""

    def __init__(self, spec, blocks, hypers, mesh=None, priors=PriorConfig()):
        self.spec = spec
        self.blocks = {b.name: b for b in blocks}
        self.hypers = {h.name: h for h in hypers}
        self.mesh = mesh
        self.priors = priors
        self.n = sum(b.dim for b in blocks)
        self._cache = {}

    # -- hyperparameters -----------------------------------------------------
    @property
    def hyper_names(self):
        return list(self.hypers)

    @property
    def free_names(self):
        return [n for n, h in self.hypers.items() if not h.fixed]

    def theta0(self):
        return np.array([self.hypers[n].to_t(self.hypers[n].value) for n in self.free_names])

    def values(self, theta=None):
        """Natural-scale values of all hyperparameters given free ``theta``."""
        hv = {n: h.value for n, h in self.hypers.items()}
        if theta is not None:
            theta = np.atleast_1d(np.asarray(theta, dtype=float))
            names = self.free_names
            if len(theta) != len(names):
                raise ValueError(f"expected {len(names)} free hyperparameters, got {len(theta)}")
            for n, t in zip(names, theta):
                hv[n] = self.hypers[n].from_t(t)
        return hv

    def log_hyperprior(self, theta):
        return float(sum(self.hypers[n].logprior(t) for n, t in zip(self.free_names, theta)))

    # -- prior precision -----------------------------------------------------
    def _block_prior(self, b, hv):
        key = (b.name,) + tuple(hv[h] for h in b.hypers.values())
        if key in self._cache:
            return self._cache[key]
        C = None
        intrinsic = False
        if b.kind in ("intercept", "linear"):
            Q = sp.identity(b.dim, format="csc") * self.priors.fixed_prec
        elif b.kind == "spatial":
            Q = spde_precision_2d(self.mesh, MaternHyper(hv[b.hypers["range"]], hv[b.hypers["sd"]])).Q
        elif b.kind == "iid":
            Q = sp.identity(b.dim, format="csc") * hv[b.hypers["tau"]]
        elif b.kind == "rw1":
            Q = hv[b.hypers["tau"]] * rw1_structure(b.dim)
            C = np.ones((1, b.dim))
            intrinsic = True
        elif b.kind == "spline":
            p = spde_precision_1d(b.knots, MaternHyper(hv[b.hypers["range"]], hv[b.hypers["sd"]]),
                                  b.constraint)
            Q, C = p.Q, p.constraints
        elif b.kind == "fwi_month":
            K = len(b.knots)
            M = len(b.levels)
            p = spde_precision_1d(b.knots, MaternHyper(hv[b.hypers["range"]], hv[b.hypers["sd"]]))
            R = rw1_structure(M) * hv[b.hypers["tau"]] if M > 1 else sp.csc_matrix((1, 1))
            T = sp.csc_matrix(R + np.ones((M, M)) / M)
            Q = sp.kron(T, p.Q, format="csc")
            row = spline_constraint(b.knots, b.constraint)
            C = np.kron(np.eye(M), row) if row is not None else None
            assert Q.shape[0] == K * M
        else:
            raise ModelSpecError(f"unknown block kind {b.kind}")
        Qa = sp.csc_matrix(Q + sp.csc_matrix(C.T @ C)) if intrinsic else sp.csc_matrix(Q)
        out = (sp.csc_matrix(Q), Qa, C)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = out
        return out

    def prior_precision(self, hv):
        """Block-diagonal ``(Q, Q_aug, C)``; ``C`` is dense (k, n) or ``None``."""
        Qs, Qas, rows = [], [], []
        for b in self.blocks.values():
            Q, Qa, C = self._block_prior(b, hv)
            Qs.append(Q)
            Qas.append(Qa)
            if C is not None:
                full = np.zeros((C.shape[0], self.n))
                full[:, b.slice] = C
                rows.append(full)
        C = np.vstack(rows) if rows else None
        return (sp.block_diag(Qs, format="csc"), sp.block_diag(Qas, format="csc"), C)

    # -- design ----------------------------------------------------------------
    def block_design(self, b, cols):
        """Sparse (m, dim) rows mapping block weights to the predictor."""
        m = len(next(iter(cols.values())))
        if b.kind == "intercept":
            return sp.csr_matrix(np.ones((m, 1)))
        if b.kind == "linear":
            return sp.csr_matrix(np.asarray(cols[b.covariate], dtype=float).reshape(m, 1))
        if b.kind == "spatial":
            pts = np.column_stack([cols["x_km"], cols["y_km"]])
            return projector_2d(self.mesh, pts)
        if b.kind in ("iid", "rw1"):
            return _onehot(_level_index(b.levels, cols[b.covariate], b.kind), b.dim)
        if b.kind == "spline":
            return projector_1d(b.knots, cols[b.covariate])
        if b.kind == "fwi_month":
            P = projector_1d(b.knots, cols[b.covariate]).tocoo()
            K = len(b.knots)
            mi = _level_index(b.levels, cols["month"], "rw1")
            return sp.csr_matrix((P.data, (P.row, mi[P.row] * K + P.col)), shape=(m, b.dim))
        raise ModelSpecError(f"unknown block kind {b.kind}")

    def component_design(self, comp, cols, hv=None, split=False):
        """Design of component ``comp`` at covariate rows ``cols``.

        With ``split=True`` returns ``(A_base, {beta_name: A_link})`` so that
        the design equals ``A_base + sum beta * A_link``.
        """
        m = len(next(iter(cols.values())))
        base = sp.lil_matrix((m, self.n)).tocsr()
        links = {}
        parts_base = []
        for eff, link in self.spec.effects_of(comp):
            b = self.blocks[eff.name]
            D = self.block_design(b, cols).tocoo()
            full = sp.csr_matrix((D.data, (D.row, D.col + b.start)), shape=(m, self.n))
            if link is None:
                parts_base.append(full)
            else:
                links[link.hyper_name] = full
        if parts_base:
            base = sum(parts_base[1:], parts_base[0]).tocsr()
        if split:
            return base, links
        A = base
        for name, L in links.items():
            A = A + hv[name] * L
        return sp.csr_matrix(A)

    # -- serialisation -------------------------------------------------------
    def to_dict(self):
        return {"spec": self.spec.to_dict(), "priors": asdict(self.priors),
                "blocks": [asdict(b) for b in self.blocks.values()],
                "hypers": [{**asdict(h), "prior": list(h.prior)} for h in self.hypers.values()]}

    @classmethod
    def from_dict(cls, d, mesh=None):
        blocks = [Block(**b) for b in d["blocks"]]
        hypers = [Hyper(**{**h, "prior": tuple(h["prior"])}) for h in d["hypers"]]
        return cls(ModelSpec.from_dict(d["spec"]), blocks, hypers, mesh, PriorConfig(**d["priors"]))


def _covariates(table, rows=None):
    cols = {c: getattr(table, c) for c in COVARIATE_COLUMNS}
    if rows is not None:
        cols = {k: v[rows] for k, v in cols.items()}
    return cols


def build_layout(spec, cols, mesh=None, priors=PriorConfig(), fixed=None, init=None,
                 season=None, knots=None):
    """Blocks, bases and hyperparameter table of ``spec``.

    Parameters
    ----------
    cols : dict of arrays
        Covariates of every row the model will see (level sets and knot
        ranges are taken from here).
    fixed, init : dict
        Hyperparameter values by name that are held fixed / used as start.
    season : sequence of int, optional
        Month levels of FWI x month and month RW1 effects.
    knots : dict, optional
        Explicit knot vectors by effect name.
    """
    fixed = dict(fixed or {})
    init = dict(init or {})
    knots = dict(knots or {})
    blocks, hypers = [], []
    start = 0
    diam = mesh.diameter() if mesh is not None else None
    r0 = priors.pc_range_r0 or (0.1 * diam if diam else 1.0)

    def add_hyper(name, transform, value, prior, fix=False):
        if name in fixed:
            value, fix = float(fixed.pop(name)), True
        elif name in init:
            value = float(init.pop(name))
        if transform == "log" and not value > 0:
            raise ModelSpecError(f"hyperparameter {name} must be positive, got {value}")
        hypers.append(Hyper(name, transform, float(value), bool(fix), tuple(prior)))
        return name

    def levels_of(cov):
        if cov not in cols:
            raise ModelSpecError(f"covariate {cov!r} is not available")
        return np.unique(np.asarray(cols[cov]))

    for eff in spec.effects:
        hp = {}
        lv = kn = None
        if eff.kind in ("intercept", "linear"):
            dim = 1
            if eff.kind == "linear" and eff.covariate not in cols:
                raise ModelSpecError(f"covariate {eff.covariate!r} is not available")
        elif eff.kind == "spatial":
            if mesh is None:
                raise ModelSpecError(f"spatial effect {eff.name} needs a mesh")
            dim = mesh.n_nodes
            hp["range"] = add_hyper(f"{eff.name}.range", "log",
                                    eff.fixed.get("range", eff.init.get("range", 0.2 * diam)),
                                    ("pc_range", r0, priors.pc_range_alpha, 2),
                                    "range" in eff.fixed)
            hp["sd"] = add_hyper(f"{eff.name}.sd", "log", eff.fixed.get("sd", eff.init.get("sd", 1.0)),
                                 ("pc_sd", priors.pc_sd_s0, priors.pc_sd_alpha), "sd" in eff.fixed)
        elif eff.kind in ("iid", "rw1"):
            if eff.kind == "rw1" and eff.covariate == "month" and season is not None:
                lv = np.asarray(sorted(season))
            else:
                lv = levels_of(eff.covariate)
            dim = len(lv)
            if eff.kind == "rw1" and dim < 2:
                raise ModelSpecError(f"RW1 effect {eff.name} needs at least two levels of "
                                     f"{eff.covariate}, found {dim}")
            hp["tau"] = add_hyper(f"{eff.name}.tau", "log",
                                  eff.fixed.get("tau", eff.init.get("tau", 1.0)),
                                  ("loggamma", priors.tau_shape, priors.tau_rate), "tau" in eff.fixed)
        elif eff.kind in ("spline", "fwi_month"):
            if eff.name in knots:
                kn = np.asarray(knots[eff.name], dtype=float)
            elif eff.covariate == "fa":
                kn = np.linspace(0.0, 100.0, eff.n_knots)
            else:
                top = float(np.max(levels_of(eff.covariate)))
                if not top > 0:
                    raise ModelSpecError(f"covariate {eff.covariate} has no spread for {eff.name}")
                kn = np.linspace(0.0, top, eff.n_knots)
            span = kn[-1] - kn[0]
            hp["range"] = add_hyper(f"{eff.name}.range", "log", eff.fixed.get("range", span / 2),
                                    ("pc_range", span / 10, priors.pc_range_alpha, 1), True)
            hp["sd"] = add_hyper(f"{eff.name}.sd", "log", eff.fixed.get("sd", 0.5),
                                 ("pc_sd", priors.pc_sd_s0, priors.pc_sd_alpha), True)
            dim = len(kn)
            if eff.kind == "fwi_month":
                lv = np.asarray(sorted(season)) if season is not None else levels_of("month")
                dim *= len(lv)
                hp["tau"] = add_hyper(f"{eff.name}.tau", "log",
                                      eff.fixed.get("tau", eff.init.get("tau", 1.0)),
                                      ("loggamma", priors.tau_shape, priors.tau_rate),
                                      "tau" in eff.fixed)
        else:
            raise ModelSpecError(f"unknown effect kind {eff.kind}")
        blocks.append(Block(eff.name, eff.kind, eff.covariate, start, dim,
                            None if lv is None else np.asarray(lv).tolist(),
                            None if kn is None else np.asarray(kn).tolist(),
                            eff.constraint, hp))
        start += dim
    for link in spec.links:
        v = link.fixed_beta if link.fixed_beta is not None else link.init_beta
        add_hyper(link.hyper_name, "identity", v, ("normal", priors.beta_prec),
                  link.fixed_beta is not None)
    for comp in spec.components:
        role = FAMILY_HYPER[comp.family]
        if role is None:
            continue
        if role == "xi":
            prior = ("exp", priors.xi_rate)
        else:
            prior = ("loggamma", priors.phi_shape, priors.phi_rate)
        add_hyper(f"{comp.name}.{role}", "log", FAMILY_INIT[role], prior)
    unknown = set(fixed) | set(init)
    if unknown:
        raise ModelSpecError(f"unknown hyperparameter(s): {sorted(unknown)}")
    return LatentLayout(spec, blocks, hypers, mesh, priors)


@dataclass
class Observations:
    """Rows of one component: covariates, response, weight and offset."""

    cols: dict
    y: np.ndarray
    weight: np.ndarray
    offset: np.ndarray

    def __len__(self):
        return len(self.y)


class LatentModel:
    """Layout plus observations, with the stacked design cached per beta."""

    def __init__(self, layout, obs):
        self.layout = layout
        self.obs = obs
        spec = layout.spec
        missing = [c for c in spec.component_names if c not in obs]
        if missing:
            raise ModelSpecError(f"no observations for component(s) {missing}")
        self.families = []
        bases, link_parts, ys, ws, offs = [], {}, [], [], []
        n_rows = [len(obs[c]) for c in spec.component_names]
        total = sum(n_rows)
        row0 = 0
        for comp, m in zip(spec.components, n_rows):
            o = obs[comp.name]
            check_support(comp.family, o.y)
            role = FAMILY_HYPER[comp.family]
            self.families.append((comp.family, slice(row0, row0 + m),
                                  None if role is None else f"{comp.name}.{role}"))
            if m:
                base, links = layout.component_design(comp.name, o.cols, split=True)
            else:
                base, links = sp.csr_matrix((0, layout.n)), {}
            bases.append(base)
            for name, L in links.items():
                pad = sp.vstack([sp.csr_matrix((row0, layout.n)), L,
                                 sp.csr_matrix((total - row0 - m, layout.n))])
                link_parts[name] = pad.tocsr()
            ys.append(o.y)
            ws.append(o.weight)
            offs.append(o.offset)
            row0 += m
        self.A0 = sp.vstack(bases).tocsr() if bases else sp.csr_matrix((0, layout.n))
        self.A_links = link_parts
        self.y = np.concatenate(ys).astype(float)
        self.weight = np.concatenate(ws).astype(float)
        self.offset = np.concatenate(offs).astype(float)
        self._A_key = None

    @property
    def n(self):
        return self.layout.n

    @property
    def n_obs(self):
        return len(self.y)

    def design(self, hv):
        key = tuple(hv[n] for n in self.A_links)
        if key != self._A_key:
            A = self.A0
            for name, L in self.A_links.items():
                if hv[name] != 0:
                    A = A + hv[name] * L
            self._A = sp.csr_matrix(A)
            self._A_key = key
        return self._A

    def negloglik(self, eta, hv):
        v = np.empty_like(eta)
        d1 = np.empty_like(eta)
        d2 = np.empty_like(eta)
        for fam, sl, hname in self.families:
            if sl.stop == sl.start:
                continue
            v[sl], d1[sl], d2[sl] = component_negloglik(
                fam, eta[sl], self.y[sl], self.weight[sl],
                None if hname is None else hv[hname], check=False)
        return v, d1, d2


def observations_from_data(spec, data, subsample=None):
    """Per-component observations from a :class:`MarkedDataset`.

    COX uses the weighted subsample (or all pixel-days with unit weights);
    BIN uses every event, BETA the moderate and GPD the extreme events
    (as excesses over ``u``), SIZE every event size minus 1 ha.
    """
    tab = data.table
    out = {}
    ev_rows = np.asarray(data.event_row)
    size = np.asarray(data.events.burnt_area, dtype=float)
    exc = np.asarray(data.exceed).astype(bool)
    for comp in spec.components:
        name = comp.name
        if comp.family == "poisson":
            if subsample is None:
                rows = np.arange(len(tab))
                w = np.ones(len(rows))
            else:
                rows, w = subsample.rows, subsample.weight
            out[name] = Observations(_covariates(tab, rows), tab.count[rows].astype(float), w,
                                     np.log(tab.volume[rows]))
            continue
        if comp.family == "bernoulli":
            sel, y = np.ones(len(size), bool), exc.astype(float)
        elif comp.family == "beta":
            sel = ~exc
            y = transform_moderate_mark(size[sel], data.u)
        elif comp.family == "gpd":
            sel = exc
            y = size[sel] - data.u
        else:
            # SIZE families model the excess over the 1 ha recording floor
            sel, y = np.ones(len(size), bool), size - 1.0
        if comp.family not in ("beta", "gpd"):
            y = y[sel]
        rows = ev_rows[sel]
        out[name] = Observations(_covariates(tab, rows), np.asarray(y, dtype=float),
                                 np.ones(len(rows)), np.zeros(len(rows)))
        if len(rows) == 0:
            log.warning("component %s has no observations", name)
    return out


def assemble_model(spec, data, subsample=None, mesh=None, priors=PriorConfig(), fixed=None,
                   init=None, knots=None):
    """Build the :class:`LatentModel` of ``spec`` on a marked dataset."""
    if not isinstance(spec, ModelSpec):
        raise ModelSpecError("spec must be a ModelSpec")
    obs = observations_from_data(spec, data, subsample)
    allcols = _covariates(data.table)
    layout = build_layout(spec, allcols, mesh, priors, fixed, init, season=data.table.season,
                          knots=knots)
    return LatentModel(layout, obs)


def model_from_arrays(spec, obs, mesh=None, priors=PriorConfig(), fixed=None, init=None,
                      season=None, knots=None):
    """Build a model from explicit per-component :class:`Observations`."""
    keys = set.intersection(*(set(o.cols) for o in obs.values())) if obs else set()
    cols = {k: np.concatenate([np.asarray(obs[c].cols[k]) for c in obs]) for k in keys}
    if not cols:
        raise DataError("observations carry no covariates")
    layout = build_layout(spec, cols, mesh, priors, fixed, init, season=season, knots=knots)
    return LatentModel(layout, obs)
