"""Fit a discount factor to a logged sequence of predictive distributions.

The objective at a fixed ``gamma`` is the mean over steps of
``KL(subject_t || model_t(gamma))`` where ``model_t`` is the one-step-ahead
predictive of the discounted filter.  The subject comes first in the KL.

The search evaluates a coarse grid and then refines the bracket around the
best grid point with golden-section search.  The objective is not known to be
unimodal in ``gamma``, which is why the grid comes first.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import rel_entr

from .filters import CATEGORICAL, GAUSSIAN, GAMMA_FLOOR, FilterSpec, predictive_series

__all__ = [
    "PROB_FLOOR",
    "MIN_TRACE_LENGTH",
    "SubjectTrace",
    "CalibrationResult",
    "floor_probabilities",
    "kl_categorical",
    "kl_gaussian",
    "mean_update_divergence",
    "calibration_grid",
    "minimize_discount",
    "calibrate_gamma",
    "subject_from_records",
    "subject_to_records",
    "observations_from_records",
]

PROB_FLOOR = 1e-12
MIN_TRACE_LENGTH = 10
DEFAULT_TOL = 1e-4
DEFAULT_SEARCH_FLOOR = 1e-3

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def floor_probabilities(rows, floor: float = PROB_FLOOR, sum_tol: float = 1e-9) -> np.ndarray:
    """Clip probability rows from below at ``floor`` and renormalize.

    Rows that need no clipping are returned bit-for-bit unchanged, so a trace
    that was written from a model's own predictives still compares equal to
    that model.
    """
    p = np.array(rows, dtype=float, ndmin=2)
    if p.shape[-1] < 2:
        raise ValueError("categorical distributions need at least two entries")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > sum_tol)
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"distribution at step {i + 1} sums to {sums[i]!r}, not 1")
    low = np.any(p < floor, axis=1)
    if np.any(low):
        q = np.maximum(p[low], floor)
        q /= q.sum(axis=1, keepdims=True)
        p[low] = np.maximum(q, floor)
    return p


@dataclass(frozen=True, eq=False)
class SubjectTrace:
    """Per-step predictive distributions logged from some forecaster.

    ``values`` is ``T x K`` probabilities for a categorical trace or
    ``T x 2`` ``(mean, variance)`` rows for a Gaussian one.
    """

    family: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("subject trace values must be a 2-D array")
        if self.family == CATEGORICAL:
            v = floor_probabilities(v)
        elif self.family == GAUSSIAN:
            if v.shape[1] != 2:
                raise ValueError("gaussian subject rows are (mean, variance) pairs")
            if not np.all(np.isfinite(v)) or np.any(v[:, 1] <= 0):
                raise ValueError("gaussian subject needs finite means and variances > 0")
        else:
            raise ValueError(f"unknown family {self.family!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def categorical(cls, rows) -> "SubjectTrace":
        return cls(CATEGORICAL, rows)

    @classmethod
    def gaussian(cls, means, variances) -> "SubjectTrace":
        return cls(GAUSSIAN, np.column_stack([np.asarray(means, float), np.asarray(variances, float)]))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CalibrationResult:
    gamma_star: float
    objective_value: float
    evaluations: int
    search_log: list = field(default_factory=list)
    brackets: list = field(default_factory=list)
    status: str = "ok"

    @property
    def final_bracket(self):
        return self.brackets[-1] if self.brackets else None

    def to_dict(self) -> dict:
        return {
            "gamma_star": self.gamma_star,
            "objective_value": self.objective_value,
            "evaluations": self.evaluations,
            "status": self.status,
            "final_bracket": list(self.final_bracket) if self.final_bracket else None,
            "search_log": [[g, f] for g, f in self.search_log],
        }


def kl_categorical(p, q):
    """``sum_i p_i ln(p_i / q_i)`` in nats, over the last axis.

    Terms with ``p_i = 0`` contribute nothing.  Rounding can leave a sum a
    hair below zero for near-identical inputs; those are reported as 0.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    kl = np.maximum(rel_entr(p, q).sum(axis=-1), 0.0)
    return float(kl) if kl.ndim == 0 else kl


def kl_gaussian(p, q):
    """KL between normals given as ``(mean, variance)``; broadcasts over rows."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mp, vp = p[..., 0], p[..., 1]
    mq, vq = q[..., 0], q[..., 1]
    if np.any(vp <= 0) or np.any(vq <= 0):
        raise ValueError("variances must be > 0")
    kl = 0.5 * np.log(vq / vp) + (vp + (mp - mq) ** 2) / (2.0 * vq) - 0.5
    kl = np.maximum(kl, 0.0)
    return float(kl) if kl.ndim == 0 else kl


def _kl_rows(family: str, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    if family == CATEGORICAL:
        return np.atleast_1d(kl_categorical(p, q))
    return np.atleast_1d(kl_gaussian(p, q))


def _check_alignment(subject: SubjectTrace, observations, spec: FilterSpec) -> np.ndarray:
    if subject.family != spec.family:
        raise ValueError(f"subject family {subject.family!r} does not match filter family {spec.family!r}")
    if spec.windowed:
        raise ValueError("calibration fits a discounted filter; the FilterSpec must not set a window")
    obs = np.asarray(observations)
    if obs.ndim != 1 or obs.shape[0] != len(subject):
        raise ValueError(f"subject has {len(subject)} steps but there are {obs.shape[0] if obs.ndim else 0} observations")
    if spec.family == CATEGORICAL and subject.values.shape[1] != spec.prior.k:
        raise ValueError(f"subject has {subject.values.shape[1]} categories, prior has {spec.prior.k}")
    return obs


def mean_update_divergence(subject: SubjectTrace, observations, spec: FilterSpec, gamma: float) -> float:
    """Mean ``KL(subject_t || discounted-filter predictive_t)`` over the trace."""
    obs = _check_alignment(subject, observations, spec)
    model = predictive_series(spec.with_gamma(gamma), obs)
    return float(np.mean(_kl_rows(spec.family, subject.values, model)))


def calibration_grid(floor: float = DEFAULT_SEARCH_FLOOR) -> list[float]:
    """``[floor, 0.05, 0.10, ..., 1.0]``: 21 points."""
    return [floor] + [i / 20 for i in range(1, 21)]


def minimize_discount(
    objective: Callable[[float], float],
    tol: float = DEFAULT_TOL,
    floor: float = DEFAULT_SEARCH_FLOOR,
    workers: int = 1,
) -> CalibrationResult:
    """Grid search followed by golden-section refinement over ``[floor, 1]``.

    Returns the best point seen anywhere in the search.  ``brackets`` records
    every refinement interval; each is nested in the one before it and the
    first contains the grid minimum.
    """
    if not tol > 0:
        raise ValueError(f"tolerance must be > 0, got {tol!r}")
    if not GAMMA_FLOOR <= floor < 0.05:
        raise ValueError(f"search floor must lie in [{GAMMA_FLOOR}, 0.05), got {floor!r}")

    grid = calibration_grid(floor)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(objective, grid))
        values = [float(v) for v in values]
    else:
        values = [float(objective(g)) for g in grid]
    log = list(zip(grid, values))

    vals = np.array(values)
    scale = max(1.0, float(np.abs(vals).max()))
    if float(vals.max() - vals.min()) <= 1e-14 * scale:
        return CalibrationResult(1.0, values[-1], len(log), log, [], status="flat")

    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, len(grid) - 1)]
    brackets = [(a, b)]

    def f(g):
        v = float(objective(g))
        log.append((g, v))
        return v

    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a >= tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
        brackets.append((a, b))

    # first occurrence wins on ties, so grid points take precedence
    best_g, best_v = min(log, key=lambda gv: gv[1])
    return CalibrationResult(best_g, best_v, len(log), log, brackets)


def calibrate_gamma(
    subject: SubjectTrace,
    observations: Sequence,
    spec: FilterSpec,
    tol: float = DEFAULT_TOL,
    floor: float = DEFAULT_SEARCH_FLOOR,
    workers: int = 1,
) -> CalibrationResult:
    """Discount factor whose filter best reproduces ``subject``.

    ``spec`` supplies the family and prior; its own ``gamma`` is ignored.
    Traces shorter than ``MIN_TRACE_LENGTH`` steps are rejected.  A landscape
    that is flat across the whole grid is returned with ``status="flat"`` and
    ``gamma_star = 1``.
    """
    obs = _check_alignment(subject, observations, spec)
    if obs.shape[0] < MIN_TRACE_LENGTH:
        raise ValueError(f"trace has {obs.shape[0]} steps; calibration needs at least {MIN_TRACE_LENGTH}")

    def objective(g):
        return mean_update_divergence(subject, obs, spec, g)

    return minimize_discount(objective, tol=tol, floor=floor, workers=workers)


# -- file formats ----------------------------------------------------------------


def subject_from_records(records: Sequence[dict]) -> SubjectTrace:
    """Build a trace from ``{"t", "dist"}`` or ``{"t", "mean", "var"}`` records."""
    if not records:
        raise ValueError("subject file has no records")
    gaussian = "mean" in records[0]
    rows = []
    for i, rec in enumerate(records, start=1):
        if rec.get("t") != i:
            raise ValueError(f"subject record {i} has t={rec.get('t')!r}, expected {i}")
        try:
            rows.append([rec["mean"], rec["var"]] if gaussian else rec["dist"])
        except KeyError as exc:
            raise ValueError(f"subject record {i} is missing field {exc.args[0]!r}") from None
    if gaussian:
        return SubjectTrace(GAUSSIAN, np.array(rows, dtype=float))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError("subject distributions do not all have the same length")
    return SubjectTrace(CATEGORICAL, np.array(rows, dtype=float))


def subject_to_records(subject: SubjectTrace) -> list[dict]:
    if subject.family == CATEGORICAL:
        return [{"t": t, "dist": [float(x) for x in row]} for t, row in enumerate(subject.values, start=1)]
    return [{"t": t, "mean": float(m), "var": float(v)} for t, (m, v) in enumerate(subject.values, start=1)]


def observations_from_records(records: Sequence[dict]) -> list:
    """Observations from ``{"t", "obs"}`` records; a leading header record is skipped."""
    body = [r for r in records if "header" not in r]
    out = []
    for i, rec in enumerate(body, start=1):
        if rec.get("t") != i or "obs" not in rec:
            raise ValueError(f"observation record {i} must carry t={i} and an obs field")
        out.append(rec["obs"])
    return out
