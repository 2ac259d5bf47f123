"""Latent Gaussian model assembly and empirical-Bayes Laplace fitting."""
from .families import component_negloglik, mean_response
from .fit import (HyperGrid, OptimResult, PosteriorFit, data_digest, fit, fit_model,
                  integrate_hyperparameters, optimize_hyperparameters, sample_posterior)
from .laplace import GaussianApprox, gaussian_approximation, laplace_log_marginal
from .model import (LatentLayout, LatentModel, Observations, assemble_model, build_layout,
                    model_from_arrays, observations_from_data)
from .priors import PriorConfig
from .spec import Component, Effect, ModelSpec, SharingLink, preset
from .storage import load_fit, save_fit

__all__ = [
    "Component", "Effect", "GaussianApprox", "HyperGrid", "LatentLayout", "LatentModel",
    "ModelSpec", "Observations", "OptimResult", "PosteriorFit", "PriorConfig", "SharingLink",
    "assemble_model", "build_layout", "component_negloglik", "data_digest", "fit", "fit_model",
    "gaussian_approximation", "integrate_hyperparameters", "laplace_log_marginal", "load_fit",
    "mean_response", "model_from_arrays", "observations_from_data", "optimize_hyperparameters",
    "preset", "sample_posterior", "save_fit",
]
