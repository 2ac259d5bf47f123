"""Excursion functions of latent fields from posterior samples.

The excursion set ``E+_{u,alpha}`` is searched within the one-parameter
family of prefix sets obtained by ordering nodes by decreasing marginal
exceedance probability.  A node at rank ``k`` receives the joint probability
that every node of the prefix up to ``k`` exceeds ``u``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..inference.fit import sample_posterior

MIN_SAMPLES = 1000


@dataclass
class ExcursionResult:
    field: str
    u: float
    f_plus: np.ndarray | None
    f_minus: np.ndarray | None
    order_plus: np.ndarray | None = None
    order_minus: np.ndarray | None = None
    marginal_plus: np.ndarray | None = None
    marginal_minus: np.ndarray | None = None

    def excursion_set(self, alpha, sign="+"):
        """Nodes in ``E_{u,alpha}``: those with ``F >= 1 - alpha``."""
        f = self.f_plus if sign == "+" else self.f_minus
        if f is None:
            raise ValueError(f"no {sign} excursion function computed")
        return np.flatnonzero(f >= 1 - alpha)


def prefix_excursion(events):
    """Excursion function from boolean event samples ``(n_samples, n_nodes)``.

    Returns ``(F, order, marginal)``; ``F`` is non-increasing along ``order``.
    """
    E = np.asarray(events, dtype=bool)
    marg = E.mean(axis=0)
    order = np.argsort(-marg, kind="stable")
    joint = np.logical_and.accumulate(E[:, order], axis=1).mean(axis=0)
    F = np.empty(E.shape[1])
    F[order] = joint
    return F, order, marg


def excursion_from_samples(samples, u, sign="both", field=""):
    """Positive (``X > u``) and negative (``X < -u``) excursion functions."""
    S = np.asarray(samples, dtype=float)
    if S.ndim != 2:
        raise ValueError("samples must be (n_samples, n_nodes)")
    if sign not in ("+", "-", "both"):
        raise ValueError(f"sign must be '+', '-' or 'both', got {sign!r}")
    res = ExcursionResult(field, float(u), None, None)
    if sign in ("+", "both"):
        res.f_plus, res.order_plus, res.marginal_plus = prefix_excursion(S > u)
    if sign in ("-", "both"):
        res.f_minus, res.order_minus, res.marginal_minus = prefix_excursion(S < -u)
    return res


def excursion_function(fit, field, u=0.1, sign="both", n_samples=10_000, seed=0, grid=None):
    """Excursion functions of latent block ``field`` of a fitted model.

    Parameters
    ----------
    field : str
        Block name (an effect or a sharing link, e.g. ``"COX-BIN"``).
    u : float
        Level; the negative function uses ``-u``.
    n_samples : int
        Posterior draws, at least 1000.
    """
    if int(n_samples) < MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_SAMPLES}")
    if field not in fit.layout.blocks:
        raise KeyError(f"no latent field {field!r} in the fit")
    X = sample_posterior(fit, int(n_samples), seed, grid=grid)
    return excursion_from_samples(X[:, fit.layout.blocks[field].slice], u, sign, field)
