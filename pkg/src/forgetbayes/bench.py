"""Benchmark harness: predictive KL, error decomposition, forgetting curves.

Two KL directions appear here and they are not interchangeable:

* scoring a forecaster against the generating distribution uses
  ``KL(truth_t || forecast_t)``;
* the update divergence inside :func:`decompose_error` comes from calibration
  and uses ``KL(subject_t || model_t)``.

The forecaster standing in for a model under study is always the exact
conjugate predictor run over a *shaped* context: all past observations
(``full``), the last ``k`` (``window``), or ``k`` drawn under exponential
recency weights (``pmp``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .calibration import SubjectTrace, calibrate_gamma, floor_probabilities, kl_categorical, kl_gaussian
from .config import validate_config
from .environments import (
    EnvTrace,
    Piecewise,
    RandomWalk,
    RecallEvent,
    SegmentSpec,
    derive_seed,
    gen_biased_die,
    gen_recall_task,
    gen_shifting_gaussian,
    recall_answers,
)
from .filters import CATEGORICAL, FilterSpec, exact_predictive, predictive_series
from .kernel import forgetting_weights
from .pmp import sample_indices

__all__ = [
    "KLSeries",
    "ErrorDecomposition",
    "CurveFit",
    "DelayBin",
    "ContextPolicy",
    "BenchReport",
    "CSV_COLUMNS",
    "truth_kl",
    "run_filter_on_trace",
    "policy_predictives",
    "decompose_error",
    "fit_forgetting_curve",
    "recall_accuracy_by_delay",
    "trial_seeds",
    "compare_methods",
    "mode_accuracy",
    "pool_bins",
]

CSV_COLUMNS = ("environment", "method", "seed", "mean_kl", "accuracy", "gamma_star", "e_total", "e_update", "e_spec")
S_CAP = 1e6
A_MAX = 1.5
METHODS = ("full", "window", "pmp")


@dataclass(frozen=True, eq=False)
class KLSeries:
    values: np.ndarray
    mean: float
    config: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, values, config=None) -> "KLSeries":
        v = np.asarray(values, dtype=float)
        if np.any(v < 0):
            raise ValueError("KL values must be >= 0")
        return cls(v, float(np.mean(v)) if v.size else 0.0, dict(config or {}))


@dataclass(frozen=True)
class ErrorDecomposition:
    e_total: float
    e_update: float
    e_spec: float
    gamma_star: float
    e_update_raw: float
    clamped: bool


@dataclass(frozen=True)
class CurveFit:
    model: str  # "exponential" or "power"
    params: dict
    rmse: float
    n_points: int
    n_excluded: int = 0

    def predict(self, delays) -> np.ndarray:
        d = np.asarray(delays, dtype=float)
        if self.model == "exponential":
            return self.params["a"] * np.exp(-d / self.params["s"])
        return self.params["a"] * (1.0 + d) ** (-self.params["b"])

    def to_dict(self) -> dict:
        return {"model": self.model, "params": dict(self.params), "rmse": self.rmse,
                "n_points": self.n_points, "n_excluded": self.n_excluded}


@dataclass(frozen=True)
class DelayBin:
    lo: int
    hi: int
    n: int
    correct: int
    delay_sum: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n

    @property
    def mean_delay(self) -> float:
        return self.delay_sum / self.n


@dataclass(frozen=True)
class ContextPolicy:
    """How much of the past a forecaster gets to see.

    ``full`` keeps everything, ``window`` the last ``k`` items, ``pmp`` draws
    ``k`` items without replacement under recency weights with rate ``lam``.
    """

    kind: str
    k: int | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown context policy {self.kind!r}")
        if self.kind != "full" and (self.k is None or self.k < 1):
            raise ValueError(f"{self.kind} policy needs k >= 1")
        if self.kind == "pmp" and (self.lam is None or self.lam < 0):
            raise ValueError("pmp policy needs a rate lam >= 0")

    def select(self, t: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """0-based positions kept from a history of length ``t``, ascending."""
        if self.kind == "full" or t <= self.k:
            return np.arange(t)
        if self.kind == "window":
            return np.arange(t - self.k, t)
        return np.sort(sample_indices(forgetting_weights(t, self.lam), self.k, rng))


# -- predictive KL ------------------------------------------------------------


def truth_kl(trace: EnvTrace, predictives: np.ndarray) -> np.ndarray:
    """Per-step ``KL(truth_t || predictive_t)``."""
    if predictives.shape != trace.truths.shape:
        raise ValueError(f"predictive shape {predictives.shape} does not match truths {trace.truths.shape}")
    if trace.family == CATEGORICAL:
        return np.atleast_1d(kl_categorical(trace.truths, predictives))
    return np.atleast_1d(kl_gaussian(trace.truths, predictives))


def run_filter_on_trace(spec: FilterSpec, trace: EnvTrace) -> KLSeries:
    if spec.family != trace.family:
        raise ValueError(f"filter family {spec.family!r} does not match trace family {trace.family!r}")
    preds = predictive_series(spec, trace.observations)
    config = {"family": spec.family, "gamma": spec.gamma, "window": spec.window}
    return KLSeries.from_values(truth_kl(trace, preds), config)


def policy_predictives(trace: EnvTrace, spec: FilterSpec, policy: ContextPolicy,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """Exact conjugate forecasts, each made from the context ``policy`` keeps.

    ``spec`` supplies the prior (and observation variance); its discount and
    window settings are ignored.
    """
    base = FilterSpec(spec.family, spec.prior, obs_variance=spec.obs_variance)
    obs = trace.observations
    if policy.kind == "full":
        return predictive_series(base, obs)
    if policy.kind == "window":
        return predictive_series(FilterSpec(spec.family, spec.prior, obs_variance=spec.obs_variance,
                                            window=policy.k), obs)
    if rng is None:
        raise ValueError("pmp policy needs an rng")
    out = np.empty(trace.truths.shape)
    full = predictive_series(base, obs[: policy.k + 1])
    n_full = min(len(obs), policy.k + 1)
    out[:n_full] = full[:n_full]
    for t in range(n_full, len(obs)):
        keep = policy.select(t, rng)
        out[t] = exact_predictive(base, obs[keep])
    return out


def mode_accuracy(trace: EnvTrace, predictives: np.ndarray) -> float | None:
    """Probability under the truth that each forecast's most likely face comes up."""
    if trace.family != CATEGORICAL:
        return None
    picks = np.argmax(predictives, axis=1)
    return float(np.mean(trace.truths[np.arange(len(trace)), picks]))


# -- error decomposition ---------------------------------------------------------


def decompose_error(subject: SubjectTrace, trace: EnvTrace, spec: FilterSpec,
                    tol: float = 1e-4, floor: float = 1e-3) -> ErrorDecomposition:
    """Split a subject's error against the truth into update and residual parts.

    ``e_total`` is the mean ``KL(subject_t || truth_t)``.  ``e_update`` is the
    calibrated mean ``KL(subject_t || discounted-filter_t)`` at the best
    discount.  ``e_spec`` is what remains.  When the update divergence exceeds
    the total it is clamped to the total (``clamped=True``) so the parts add up.
    """
    if len(subject) != len(trace):
        raise ValueError(f"subject has {len(subject)} steps but the trace has {len(trace)}")
    if subject.family != trace.family:
        raise ValueError("subject and trace families differ")
    if trace.family == CATEGORICAL:
        e_total = float(np.mean(kl_categorical(subject.values, floor_probabilities(trace.truths))))
    else:
        e_total = float(np.mean(kl_gaussian(subject.values, trace.truths)))
    cal = calibrate_gamma(subject, trace.observations, spec, tol=tol, floor=floor)
    raw = cal.objective_value
    e_update = min(raw, e_total)
    return ErrorDecomposition(
        e_total=e_total,
        e_update=e_update,
        e_spec=e_total - e_update,
        gamma_star=cal.gamma_star,
        e_update_raw=raw,
        clamped=raw > e_total,
    )


# -- forgetting curves --------------------------------------------------------------


def _rmse(fit: CurveFit, d: np.ndarray, r: np.ndarray) -> float:
    return float(np.sqrt(np.mean((fit.predict(d) - r) ** 2)))


def fit_forgetting_curve(points: Iterable[tuple[float, float]]) -> tuple[CurveFit, CurveFit]:
    """Fit ``a * exp(-d / s)`` and ``a * (1 + d) ** -b`` to (delay, accuracy) points.

    Both are straight-line least squares after taking logs; points with zero
    accuracy cannot be logged and are left out of the fit (``n_excluded``)
    but still count in the RMSE, which is measured on the raw accuracies.
    A flat or rising curve gives ``s = 1e6`` and ``b = 0``.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (delay, accuracy) pairs")
    d, r = pts[:, 0], pts[:, 1]
    if np.unique(d).size < 3:
        raise ValueError("need at least 3 distinct delays")
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("accuracies must lie in [0, 1]")
    pos = r > 0
    if np.unique(d[pos]).size < 3:
        raise ValueError(f"need at least 3 delays with positive accuracy, got {int(np.unique(d[pos]).size)}")
    excluded = int((~pos).sum())
    dp, logr = d[pos], np.log(r[pos])

    slope, icpt = np.polyfit(dp, logr, 1)
    s = -1.0 / slope if slope < -1.0 / S_CAP else S_CAP
    a = min(math.exp(icpt), A_MAX)
    exp_fit = CurveFit("exponential", {"a": a, "s": s}, 0.0, int(pos.sum()), excluded)
    exp_fit = CurveFit("exponential", exp_fit.params, _rmse(exp_fit, d, r), exp_fit.n_points, excluded)

    slope, icpt = np.polyfit(np.log1p(dp), logr, 1)
    b = max(-slope, 0.0)
    a = min(math.exp(icpt), A_MAX)
    pow_fit = CurveFit("power", {"a": a, "b": b}, 0.0, int(pos.sum()), excluded)
    pow_fit = CurveFit("power", pow_fit.params, _rmse(pow_fit, d, r), pow_fit.n_points, excluded)
    return exp_fit, pow_fit


def _delay_bin(delay: int) -> int:
    return int(delay).bit_length() - 1


def recall_accuracy_by_delay(events: Sequence[RecallEvent], policy: ContextPolicy,
                             rng: np.random.Generator | None = None) -> list[DelayBin]:
    """Probe accuracy of a forecaster that only sees a shaped context.

    At each probe the context is every earlier event, shaped by ``policy``.
    The answer is the most recent value bound to the probed key among the
    kept presentations; a key with no kept presentation is a miss.  Results
    are grouped into delay bins ``[1], [2, 3], [4, 7], ...``.
    """
    answers = recall_answers(events)
    n: dict[int, int] = {}
    correct: dict[int, int] = {}
    dsum: dict[int, int] = {}
    for t, ev in enumerate(events):
        if ev.kind != "probe":
            continue
        keep = policy.select(t, rng)
        guess = None
        for i in keep[::-1]:
            past = events[i]
            if past.kind == "present" and past.key == ev.key:
                guess = past.value
                break
        j = _delay_bin(ev.delay)
        n[j] = n.get(j, 0) + 1
        correct[j] = correct.get(j, 0) + (guess == answers[t])
        dsum[j] = dsum.get(j, 0) + ev.delay
    return [DelayBin(2 ** j, 2 ** (j + 1) - 1, n[j], correct[j], dsum[j]) for j in sorted(n)]


def pool_bins(bin_lists: Iterable[Sequence[DelayBin]]) -> list[DelayBin]:
    acc: dict[int, list[int]] = {}
    for bins in bin_lists:
        for b in bins:
            slot = acc.setdefault(b.lo, [b.hi, 0, 0, 0])
            slot[1] += b.n
            slot[2] += b.correct
            slot[3] += b.delay_sum
    return [DelayBin(lo, v[0], v[1], v[2], v[3]) for lo, v in sorted(acc.items())]


# -- method comparison --------------------------------------------------------------


def trial_seeds(master_seed: int, trials: int) -> list[int]:
    return [derive_seed(master_seed, i) for i in range(trials)]


def _make_env(env: dict, seed: int):
    kind = env["kind"]
    if kind == "biased-die":
        segs = [SegmentSpec(s["duration"], probs=s["probs"]) for s in env["segments"]]
        return gen_biased_die(segs, seed)
    if kind == "shifting-gaussian":
        if "segments" in env:
            mode = Piecewise(tuple(SegmentSpec(s["duration"], mean=s["mean"]) for s in env["segments"]))
        else:
            rw = env["random_walk"]
            mode = RandomWalk(rw["drift_variance"], rw["length"], rw.get("mu0", 0.0))
        return gen_shifting_gaussian(mode, env["obs_variance"], seed)
    return gen_recall_task(env["vocab_size"], env["length"], env["probe_fraction"],
                           env.get("delay_distribution", "uniform"), seed)


def _prior_spec(cfg: dict, trace: EnvTrace) -> FilterSpec:
    prior = cfg["prior"]
    if trace.family == CATEGORICAL:
        return FilterSpec.categorical(alpha=np.full(trace.k, float(prior["dirichlet_alpha"])))
    return FilterSpec.gaussian(prior["gaussian_mean"], prior["gaussian_variance"],
                               obs_variance=float(trace.truths[0, 1]))


def _policies(cfg: dict) -> dict[str, ContextPolicy]:
    pol = cfg["policies"]
    return {
        "full": ContextPolicy("full"),
        "window": ContextPolicy("window", k=pol["window"]["k"]),
        "pmp": ContextPolicy("pmp", k=pol["pmp"]["k"], lam=float(pol["pmp"]["lambda"])),
    }


def _run_trial(cfg: dict, seed: int) -> tuple[list[dict], dict]:
    """All environments and methods for one trial seed."""
    rows: list[dict] = []
    bins: dict = {}
    policies = _policies(cfg)
    for e, env in enumerate(cfg["environments"]):
        generated = _make_env(env, seed)
        for m, (name, policy) in enumerate(policies.items()):
            rng = np.random.default_rng([seed, e, m])
            row = {c: None for c in CSV_COLUMNS}
            row.update(environment=env["name"], method=name, seed=seed)
            if env["kind"] == "recall":
                b = recall_accuracy_by_delay(generated, policy, rng)
                bins[(env["name"], name)] = b
                total = sum(x.n for x in b)
                row["accuracy"] = sum(x.correct for x in b) / total if total else None
            else:
                trace = generated
                spec = _prior_spec(cfg, trace)
                preds = policy_predictives(trace, spec, policy, rng)
                row["mean_kl"] = float(np.mean(truth_kl(trace, preds)))
                row["accuracy"] = mode_accuracy(trace, preds)
                dec = decompose_error(SubjectTrace(trace.family, preds), trace, spec,
                                      tol=cfg["calibration"]["tol"], floor=cfg["calibration"]["floor"])
                row.update(gamma_star=dec.gamma_star, e_total=dec.e_total, e_update=dec.e_update,
                           e_spec=dec.e_spec)
                row["_clamped"] = dec.clamped
            rows.append(row)
    return rows, bins


def _run_trial_packed(args):
    return _run_trial(*args)


def _mean_sd(values: list) -> dict | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    arr = np.array(vals, dtype=float)
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else None
    return {"mean": float(np.mean(arr)), "sd": sd}


class BenchReport:
    """Result of :func:`compare_methods`; a thin wrapper over a JSON document."""

    KEYS = ("config", "seeds", "methods", "decomposition", "curve_fits", "meta")

    def __init__(self, doc: dict, rows: list[dict] | None = None):
        missing = [k for k in self.KEYS if k not in doc]
        if missing:
            raise ValueError(f"report is missing keys {missing}")
        self.doc = doc
        self.rows = rows if rows is not None else doc.get("rows", [])

    def __getitem__(self, key):
        return self.doc[key]

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        return cls(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary_lines(self) -> list[str]:
        lines = []
        for env, methods in self.doc["methods"].items():
            for name, stats in methods.items():
                parts = [f"{env:16s} {name:7s}"]
                for key in ("mean_kl", "accuracy"):
                    s = stats.get(key)
                    if s is not None:
                        sd = "n/a" if s["sd"] is None else f"{s['sd']:.4f}"
                        parts.append(f"{key}={s['mean']:.4f}±{sd}")
                lines.append("  ".join(parts))
        return lines


def compare_methods(config: dict, seeds: Sequence[int], workers: int = 1) -> BenchReport:
    """Run full-context, window and PMP forecasters over every environment.

    ``seeds`` are per-trial seeds (see :func:`trial_seeds`).  Trials may run
    in worker processes; results are folded in seed-list order, so the report
    does not depend on ``workers``.
    """
    cfg = validate_config(config)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    if any(s < 0 for s in seeds):
        raise ValueError("seeds must be non-negative")

    jobs = [(cfg, s) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_packed, jobs))
    else:
        results = [_run_trial(*job) for job in jobs]

    rows = [row for trial_rows, _ in results for row in trial_rows]
    methods: dict = {}
    decomposition: dict = {}
    curve_fits: dict = {}
    for env in cfg["environments"]:
        name = env["name"]
        methods[name], decomposition[name] = {}, {}
        for method in METHODS:
            sel = [r for r in rows if r["environment"] == name and r["method"] == method]
            methods[name][method] = {
                "n": len(sel),
                "mean_kl": _mean_sd([r["mean_kl"] for r in sel]),
                "accuracy": _mean_sd([r["accuracy"] for r in sel]),
            }
            if env["kind"] != "recall":
                decomposition[name][method] = {
                    key: _mean_sd([r[key] for r in sel]) for key in ("gamma_star", "e_total", "e_update", "e_spec")
                }
                decomposition[name][method]["clamped"] = sum(bool(r["_clamped"]) for r in sel)
        if env["kind"] == "recall":
            curve_fits[name] = {}
            for method in METHODS:
                pooled = pool_bins(b[(name, method)] for _, b in results)
                entry = {"bins": [{"lo": b.lo, "hi": b.hi, "n": b.n, "accuracy": b.accuracy,
                                   "mean_delay": b.mean_delay} for b in pooled]}
                try:
                    exp_fit, pow_fit = fit_forgetting_curve((b.mean_delay, b.accuracy) for b in pooled)
                    entry["exponential"] = exp_fit.to_dict()
                    entry["power"] = pow_fit.to_dict()
                except ValueError as exc:
                    entry["error"] = str(exc)
                curve_fits[name][method] = entry

    public_rows = [{c: r[c] for c in CSV_COLUMNS} for r in rows]
    doc = {
        "config": cfg,
        "seeds": seeds,
        "methods": methods,
        "decomposition": decomposition,
        "curve_fits": curve_fits,
        "meta": {"package_version": __version__, "trials": len(seeds), "csv_columns": list(CSV_COLUMNS)},
    }
    return BenchReport(doc, public_rows)

