"""Posterior predictive simulation, proper scores and excursion functions."""
from .excursion import (ExcursionResult, excursion_from_samples, excursion_function,
                        prefix_excursion)
from .predictive import (GROUPINGS, GroupedSamples, PredictiveSamples, aggregate,
                         component_predictors, group_labels, interval_coverage,
                         observed_per_row, observed_totals, pit_values, predictive_counts,
                         predictive_sizes)
from .scores import auc, brier, crps, permutation_test, report_orientation, scrps, waic
from .loglik import pointwise_loglik

__all__ = [
    "ExcursionResult", "GROUPINGS", "GroupedSamples", "PredictiveSamples", "aggregate", "auc",
    "brier", "component_predictors", "crps", "excursion_from_samples", "excursion_function",
    "group_labels", "interval_coverage", "observed_per_row", "observed_totals",
    "permutation_test", "pit_values", "pointwise_loglik", "predictive_counts",
    "predictive_sizes", "prefix_excursion", "report_orientation", "scrps", "waic",
]
