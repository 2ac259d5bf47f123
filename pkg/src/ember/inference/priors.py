"""Hyperpriors, all expressed as log densities on the optimisation scale."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class PriorConfig:
    """Prior settings.

    ``pc_range_r0=None`` means 10% of the mesh diameter.
    """

    fixed_prec: float = 0.001
    beta_prec: float = 1.0 / 20.0
    tau_shape: float = 0.0005          # log-gamma: Gamma(shape, rate) on tau,
    tau_rate: float = 0.0005           # mean 1, precision 0.0005
    xi_rate: float = 1.0
    pc_range_alpha: float = 0.05       # P(range < r0)
    pc_range_r0: float | None = None
    pc_sd_alpha: float = 0.05          # P(sd > s0)
    pc_sd_s0: float = 1.0
    phi_shape: float = 1.0
    phi_rate: float = 0.01

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v is not None and not v > 0:
                raise ValueError(f"prior setting {k} must be positive")
        for k in ("pc_range_alpha", "pc_sd_alpha"):
            if not getattr(self, k) < 1:
                raise ValueError(f"{k} must lie in (0, 1)")


def log_gamma_on_log(t, shape, rate):
    """Log density of ``t = log(tau)`` when ``tau ~ Gamma(shape, rate)``."""
    return shape * np.log(rate) - gammaln(shape) + shape * t - rate * np.exp(t)


def log_exp_on_log(t, rate):
    """Log density of ``t = log(x)`` when ``x ~ Exp(rate)``."""
    return np.log(rate) - rate * np.exp(t) + t


def log_normal(b, prec):
    return 0.5 * (np.log(prec) - np.log(2 * np.pi)) - 0.5 * prec * b * b


def pc_matern_on_log(log_range, log_sd, r0, alpha_r, s0, alpha_s, dim=2):
    """Joint PC prior of a Matérn field on ``(log range, log sd)``.

    ``pi(r, s) = (d/2) lr r^(-1-d/2) exp(-lr r^(-d/2)) * ls exp(-ls s)`` with
    ``lr = -log(alpha_r) r0^(d/2)`` and ``ls = -log(alpha_s) / s0``; the log
    Jacobian ``log r + log s`` is added.
    """
    r, s = np.exp(log_range), np.exp(log_sd)
    lr = -np.log(alpha_r) * r0 ** (dim / 2)
    ls = -np.log(alpha_s) / s0
    lp_r = np.log(dim / 2 * lr) - (1 + dim / 2) * log_range - lr * r ** (-dim / 2) + log_range
    lp_s = np.log(ls) - ls * s + log_sd
    return lp_r + lp_s
