"""Pointwise log-likelihood over posterior draws, the input of WAIC."""
from __future__ import annotations

import numpy as np

from ..inference.families import component_negloglik
from ..inference.fit import sample_posterior


def pointwise_loglik(fit, model, n=200, seed=0, weighted=False, components=None):
    """Log-likelihood of every observation of ``model`` under ``n`` latent
    draws from ``fit``.

    Parameters
    ----------
    model : LatentModel
        Observations to evaluate (usually ``fit.model``).
    weighted : bool
        Multiply by the observation weights (subsampling weights for COX).
    components : sequence of str, optional
        Restrict to these components.

    Returns
    -------
    array, shape (n, n_obs_selected)
    """
    X = sample_posterior(fit, n, seed)
    hv = fit.hyper
    eta = model.design(hv) @ X.T + model.offset[:, None]
    cols = []
    comps = model.layout.spec.component_names
    for (fam, sl, hname), comp in zip(model.families, comps):
        if components is not None and comp not in components:
            continue
        w = model.weight[sl][:, None] if weighted else 1.0
        v, _, _ = component_negloglik(fam, eta[sl], model.y[sl][:, None], w,
                                      None if hname is None else hv[hname], check=False)
        cols.append(-v)
    if not cols:
        return np.zeros((n, 0))
    return np.vstack(cols).T
