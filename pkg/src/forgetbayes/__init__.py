"""Discounted Bayesian filtering over drifting streams.

Submodules:

* ``kernel``        exponential recency weights
* ``filters``       discounted Dirichlet and Gaussian filters
* ``calibration``   fitting a discount factor to logged predictive traces
* ``pmp``           recency-weighted context subsampling
* ``environments``  synthetic drifting streams with recorded truths
* ``bench``         predictive KL, error decomposition, forgetting curves
"""

__version__ = "0.1.0"

from .kernel import forgetting_weights, half_life_to_rate, rate_to_half_life  # noqa: E402
from .filters import (  # noqa: E402
    DirichletState,
    FilterSpec,
    GaussianState,
    predictive_series,
    sliding_window_step,
    step,
)
from .calibration import SubjectTrace, calibrate_gamma, kl_categorical, kl_gaussian, mean_update_divergence  # noqa: E402
from .pmp import ContextHistory, pmp_sample, truncate_window  # noqa: E402

__all__ = [
    "__version__",
    "forgetting_weights",
    "half_life_to_rate",
    "rate_to_half_life",
    "DirichletState",
    "GaussianState",
    "FilterSpec",
    "step",
    "sliding_window_step",
    "predictive_series",
    "SubjectTrace",
    "calibrate_gamma",
    "kl_categorical",
    "kl_gaussian",
    "mean_update_divergence",
    "ContextHistory",
    "pmp_sample",
    "truncate_window",
]
