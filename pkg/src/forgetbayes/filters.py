"""Discounted conjugate filters.

Each step raises the carried posterior to the power ``gamma`` and then
multiplies in the likelihood of the new observation.  For the two conjugate
families supported here the power of the posterior stays in the family:

* Dirichlet:  ``Dir(alpha)^gamma  ∝  Dir(gamma * (alpha - 1) + 1)``
* Gaussian:   ``N(m, v)^gamma     ∝  N(m, v / gamma)``

``gamma = 1`` is exact Bayesian filtering; small ``gamma`` forgets almost
everything carried over from earlier steps.

Categorical observations are face labels ``1..K`` (a die never shows 0).

Two code paths exist.  :func:`step` / :func:`sliding_window_step` work one
observation at a time on immutable state objects.  :func:`predictive_series`
computes the whole one-step-ahead predictive sequence at once by running the
same recursions as linear filters; it is what calibration and benchmarking
use, and the test-suite keeps the two paths in agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "CATEGORICAL",
    "GAUSSIAN",
    "GAMMA_FLOOR",
    "DirichletState",
    "GaussianState",
    "Normal",
    "FilterSpec",
    "check_gamma",
    "discount_dirichlet",
    "update_dirichlet",
    "predictive_dirichlet",
    "discount_gaussian",
    "update_gaussian",
    "predictive_gaussian",
    "step",
    "sliding_window_step",
    "exact_predictive",
    "predictive_series",
    "initial_state",
]

CATEGORICAL = "categorical"
GAUSSIAN = "gaussian"

# Smallest discount accepted in a FilterSpec; (0, 1] is open at zero.
GAMMA_FLOOR = 1e-6


class DirichletState:
    """Dirichlet posterior over a K-sided categorical parameter."""

    __slots__ = ("alpha",)

    def __init__(self, alpha):
        a = np.array(alpha, dtype=float)
        if a.ndim != 1 or a.size < 2:
            raise ValueError(f"Dirichlet needs a vector of K >= 2 concentrations, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValueError(f"Dirichlet concentrations must be finite and > 0, got {a.tolist()}")
        a.setflags(write=False)
        self.alpha = a

    @classmethod
    def uniform(cls, k: int) -> "DirichletState":
        return cls(np.ones(k))

    @property
    def k(self) -> int:
        return self.alpha.size

    def __eq__(self, other):
        if not isinstance(other, DirichletState):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    def __repr__(self):
        return f"DirichletState(alpha={self.alpha.tolist()})"


@dataclass(frozen=True)
class GaussianState:
    """Normal posterior over a latent mean."""

    mean: float
    variance: float

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise ValueError(f"mean must be finite, got {self.mean!r}")
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be finite and > 0, got {self.variance!r}")


class Normal(NamedTuple):
    mean: float
    variance: float


State = Union[DirichletState, GaussianState]


def check_gamma(gamma: float, floor: float = 0.0) -> float:
    gamma = float(gamma)
    if not (floor < gamma <= 1.0 or (floor > 0 and gamma == floor)):
        raise ValueError(f"discount factor must lie in ({floor}, 1], got {gamma!r}")
    return gamma


# -- Dirichlet / categorical -------------------------------------------------


def discount_dirichlet(state: DirichletState, gamma: float) -> DirichletState:
    gamma = check_gamma(gamma)
    if gamma == 1.0:
        return state
    return DirichletState(gamma * (state.alpha - 1.0) + 1.0)


def update_dirichlet(state: DirichletState, obs: int) -> DirichletState:
    j = _category(obs, state.k)
    alpha = state.alpha.copy()
    alpha[j] += 1.0
    return DirichletState(alpha)


def predictive_dirichlet(state: DirichletState) -> np.ndarray:
    return state.alpha / state.alpha.sum()


def _category(obs, k: int) -> int:
    if isinstance(obs, (bool, np.bool_)) or int(obs) != obs or not 1 <= obs <= k:
        raise ValueError(f"categorical observation must be an integer label in 1..{k}, got {obs!r}")
    return int(obs) - 1


# -- Gaussian with known observation variance ---------------------------------


def discount_gaussian(state: GaussianState, gamma: float) -> GaussianState:
    gamma = check_gamma(gamma)
    if gamma == 1.0:
        return state
    return GaussianState(state.mean, state.variance / gamma)


def update_gaussian(state: GaussianState, x: float, obs_variance: float) -> GaussianState:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"observation must be finite, got {x!r}")
    if not obs_variance > 0:
        raise ValueError(f"observation variance must be > 0, got {obs_variance!r}")
    precision = 1.0 / state.variance + 1.0 / obs_variance
    mean = (state.mean / state.variance + x / obs_variance) / precision
    return GaussianState(mean, 1.0 / precision)


def predictive_gaussian(state: GaussianState, obs_variance: float) -> Normal:
    return Normal(state.mean, state.variance + obs_variance)


# -- configuration and stepping -------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    """Filter configuration.

    ``window=None`` selects discounted filtering with ``gamma``; setting a
    window selects the sliding-window baseline, which always counts exactly
    (``gamma`` must then be left at 1).
    """

    family: str
    prior: State
    gamma: float = 1.0
    obs_variance: float | None = None
    window: int | None = None

    def __post_init__(self):
        if self.family == CATEGORICAL:
            if not isinstance(self.prior, DirichletState):
                raise ValueError("categorical filter needs a DirichletState prior")
        elif self.family == GAUSSIAN:
            if not isinstance(self.prior, GaussianState):
                raise ValueError("gaussian filter needs a GaussianState prior")
            if self.obs_variance is None or not (math.isfinite(self.obs_variance) and self.obs_variance > 0):
                raise ValueError(f"gaussian filter needs obs_variance > 0, got {self.obs_variance!r}")
        else:
            raise ValueError(f"unknown family {self.family!r}; expected {CATEGORICAL!r} or {GAUSSIAN!r}")
        object.__setattr__(self, "gamma", check_gamma(self.gamma, GAMMA_FLOOR))
        if self.window is not None:
            if isinstance(self.window, bool) or int(self.window) != self.window or self.window < 1:
                raise ValueError(f"window must be a positive integer, got {self.window!r}")
            if self.gamma != 1.0:
                raise ValueError("window mode and discounting are exclusive; leave gamma at 1 with a window")

    @classmethod
    def categorical(cls, k: int | None = None, alpha=None, gamma: float = 1.0, window: int | None = None):
        prior = DirichletState(alpha) if alpha is not None else DirichletState.uniform(k)
        return cls(CATEGORICAL, prior, gamma=gamma, window=window)

    @classmethod
    def gaussian(cls, mean: float, variance: float, obs_variance: float, gamma: float = 1.0,
                 window: int | None = None):
        return cls(GAUSSIAN, GaussianState(mean, variance), gamma=gamma,
                   obs_variance=obs_variance, window=window)

    @property
    def windowed(self) -> bool:
        return self.window is not None

    def with_gamma(self, gamma: float) -> "FilterSpec":
        return replace(self, gamma=gamma)


def initial_state(spec: FilterSpec) -> State:
    return spec.prior


def _predictive(spec: FilterSpec, state: State):
    if spec.family == CATEGORICAL:
        return predictive_dirichlet(state)
    return predictive_gaussian(state, spec.obs_variance)


def step(spec: FilterSpec, state: State, obs):
    """Advance one observation.

    Returns ``(new_state, predictive)`` where the predictive is the forecast
    for ``obs`` made from ``state`` before ``obs`` was seen.  The state is then
    discounted and updated, in that order.
    """
    if spec.windowed:
        raise ValueError("step() runs the discounted filter; use sliding_window_step() for window mode")
    if spec.family == CATEGORICAL:
        if not isinstance(state, DirichletState) or state.k != spec.prior.k:
            raise ValueError("state does not match the categorical spec")
        pred = predictive_dirichlet(state)
        return update_dirichlet(discount_dirichlet(state, spec.gamma), obs), pred
    if not isinstance(state, GaussianState):
        raise ValueError("state does not match the gaussian spec")
    pred = predictive_gaussian(state, spec.obs_variance)
    return update_gaussian(discount_gaussian(state, spec.gamma), obs, spec.obs_variance), pred


def exact_predictive(spec: FilterSpec, observations: Sequence):
    """Predictive after exact (undiscounted) updating of the prior on ``observations``."""
    obs = np.asarray(observations)
    if spec.family == CATEGORICAL:
        k = spec.prior.k
        labels = _labels(obs, k)
        alpha = spec.prior.alpha + np.bincount(labels, minlength=k)
        return alpha / alpha.sum()
    obs = _reals(obs)
    prior = spec.prior
    precision = 1.0 / prior.variance + obs.size / spec.obs_variance
    mean = (prior.mean / prior.variance + obs.sum() / spec.obs_variance) / precision
    return Normal(mean, 1.0 / precision + spec.obs_variance)


def sliding_window_step(spec: FilterSpec, buffer: tuple, obs):
    """Advance the sliding-window baseline by one observation.

    The predictive for ``obs`` is the exact posterior predictive of the fresh
    prior given only ``buffer`` (the last ``window`` observations); the buffer
    is then extended with ``obs`` and trimmed to the window.
    """
    if not spec.windowed:
        raise ValueError("sliding_window_step() needs a spec with a window")
    pred = exact_predictive(spec, list(buffer))
    if spec.family == CATEGORICAL:
        _category(obs, spec.prior.k)
    elif not math.isfinite(float(obs)):
        raise ValueError(f"observation must be finite, got {obs!r}")
    new_buffer = (tuple(buffer) + (obs,))[-spec.window:]
    return new_buffer, pred


# -- whole-sequence predictives -------------------------------------------------


def _labels(obs: np.ndarray, k: int) -> np.ndarray:
    obs = np.asarray(obs)
    if obs.size == 0:
        return np.zeros(0, dtype=np.intp)
    if obs.dtype.kind not in "iu":
        if obs.dtype.kind != "f" or not np.all(obs == np.round(obs)):
            raise ValueError("categorical observations must be integer labels")
    labels = obs.astype(np.intp)
    if labels.min() < 1 or labels.max() > k:
        raise ValueError(f"categorical observations must lie in 1..{k}")
    return labels - 1


def _reals(obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(obs)):
        raise ValueError("gaussian observations must be finite")
    return obs


def _discounted_sum(inputs: np.ndarray, gamma: float) -> np.ndarray:
    # y[t] = gamma * y[t-1] + inputs[t] along axis 0
    if gamma == 1.0:
        return np.cumsum(inputs, axis=0)
    return lfilter([1.0], [1.0, -gamma], inputs, axis=0)


def predictive_series(spec: FilterSpec, observations: Sequence) -> np.ndarray:
    """One-step-ahead predictives for every observation.

    Row ``t`` is the forecast for ``observations[t]`` made from the first
    ``t`` observations.  Categorical results are ``T x K`` probability rows;
    Gaussian results are ``T x 2`` rows of ``(mean, variance)``.
    """
    obs = np.asarray(observations)
    T = obs.shape[0] if obs.ndim else 0
    if spec.family == CATEGORICAL:
        return _categorical_series(spec, obs, T)
    return _gaussian_series(spec, obs, T)


def _categorical_series(spec: FilterSpec, obs: np.ndarray, T: int) -> np.ndarray:
    k = spec.prior.k
    labels = _labels(obs, k)
    onehot = np.zeros((T, k))
    onehot[np.arange(T), labels] = 1.0
    if spec.windowed:
        counts = np.zeros((T + 1, k))
        np.cumsum(onehot, axis=0, out=counts[1:])
        hi = np.arange(T)
        lo = np.maximum(0, hi - spec.window)
        alpha = spec.prior.alpha + (counts[hi] - counts[lo])
    elif T == 0:
        alpha = np.zeros((0, k))
    else:
        # Natural parameters eta = alpha - 1 follow eta_t = gamma * eta_{t-1} + e_{x_t}.
        inputs = np.empty((T, k))
        inputs[0] = spec.prior.alpha - 1.0
        inputs[1:] = onehot[:-1]
        eta = _discounted_sum(inputs, spec.gamma)
        alpha = eta + 1.0
        alpha[0] = spec.prior.alpha
    return alpha / alpha.sum(axis=1, keepdims=True)


def _gaussian_series(spec: FilterSpec, obs: np.ndarray, T: int) -> np.ndarray:
    x = _reals(obs)
    prior = spec.prior
    s2 = spec.obs_variance
    out = np.empty((T, 2))
    if T == 0:
        return out
    if spec.windowed:
        sums = np.zeros(T + 1)
        np.cumsum(x, out=sums[1:])
        hi = np.arange(T)
        lo = np.maximum(0, hi - spec.window)
        n = (hi - lo).astype(float)
        precision = 1.0 / prior.variance + n / s2
        info = prior.mean / prior.variance + (sums[hi] - sums[lo]) / s2
    else:
        # precision and precision-weighted mean are both discounted sums
        p_in = np.full(T, 1.0 / s2)
        p_in[0] = 1.0 / prior.variance
        h_in = np.empty(T)
        h_in[0] = prior.mean / prior.variance
        h_in[1:] = x[:-1] / s2
        precision = _discounted_sum(p_in, spec.gamma)
        info = _discounted_sum(h_in, spec.gamma)
    out[:, 0] = info / precision
    out[:, 1] = 1.0 / precision + s2
    out[0] = (prior.mean, prior.variance + s2)
    return out
