"""Exponential recency weights over a context history.

Items are indexed ``1..t`` oldest first, so item ``i`` sits ``t - i`` steps in
the past and receives unnormalized weight ``exp(-lam * (t - i))``.  The decay
rate is per item index, not per unit of wall-clock time.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "forgetting_weights",
    "half_life_to_rate",
    "rate_to_half_life",
]

# Indirection points so tests can count the work done per call.
_exp = math.exp
_cumprod = np.cumprod


def _check_rate(lam: float) -> float:
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0:
        raise ValueError(f"forgetting rate must be finite and >= 0, got {lam!r}")
    return lam


def forgetting_weights(t: int, lam: float, normalize: bool = True) -> np.ndarray:
    """Recency weights for a history of ``t`` items, oldest first.

    The newest item is the largest term, so it is pinned at 1 before
    normalization and older items are reached by repeated multiplication with
    ``exp(-lam)``.  This keeps the ratio of neighbouring weights equal to
    ``exp(lam)`` up to a few ulp regardless of how far back an item is.

    Args:
        t: number of items in the history, at least 1.
        lam: decay rate per step, ``>= 0``.
        normalize: divide by the total so the weights form a distribution.

    Returns:
        Array of length ``t`` with ``w[0]`` the oldest item's weight.
    """
    if isinstance(t, bool) or int(t) != t or t < 1:
        raise ValueError(f"context length must be a positive integer, got {t!r}")
    t = int(t)
    lam = _check_rate(lam)

    ratio = _exp(-lam)
    steps = np.full(t, ratio)
    steps[0] = 1.0
    # steps = [1, r, r, ...] -> cumprod = [1, r, r^2, ...], newest first
    w = _cumprod(steps)[::-1].copy()
    if normalize:
        w /= w.sum()
    return w


def half_life_to_rate(half_life: float) -> float:
    """Decay rate whose weights halve every ``half_life`` steps."""
    half_life = float(half_life)
    if not math.isfinite(half_life) or half_life <= 0:
        raise ValueError(f"half-life must be finite and > 0, got {half_life!r}")
    return math.log(2.0) / half_life


def rate_to_half_life(lam: float) -> float:
    lam = float(lam)
    if not math.isfinite(lam) or lam <= 0:
        raise ValueError(f"rate must be finite and > 0 to have a half-life, got {lam!r}")
    return math.log(2.0) / lam
