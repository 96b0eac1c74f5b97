"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or input, 3 I/O failure,
4 result carries a warning status (flat calibration objective).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bench import compare_methods, fit_forgetting_curve, trial_seeds
from .calibration import (
    DEFAULT_SEARCH_FLOOR,
    DEFAULT_TOL,
    calibrate_gamma,
    observations_from_records,
    subject_from_records,
)
from .config import ConfigError, default_config, load_config, merge, validate_environment
from .environments import (
    DEFAULT_DIE_SEGMENTS,
    Piecewise,
    RandomWalk,
    SegmentSpec,
    dumps_events,
    dumps_trace,
    gen_biased_die,
    gen_recall_task,
    gen_shifting_gaussian,
)
from .filters import CATEGORICAL, GAUSSIAN, FilterSpec
from .jsonl import FormatError, dumps_records, read_records
from .pmp import context_to_records, history_from_records, pmp_sample

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_WARNING = 4

DEFAULT_GAUSSIAN_PRIOR = {"mean": 0.0, "var": 100.0}
DEFAULT_GEN = {
    "biased-die": {"segments": [{"duration": s.duration, "probs": list(s.probs)} for s in DEFAULT_DIE_SEGMENTS]},
    "shifting-gaussian": {"obs_variance": 1.0, "random_walk": {"drift_variance": 0.01, "length": 1500, "mu0": 0.0}},
    "recall": {"vocab_size": 20, "length": 2000, "probe_fraction": 0.2, "delay_distribution": "uniform"},
}


class UsageError(Exception):
    pass


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, but not for options whose default is "unset"."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _json_arg(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what}: invalid JSON ({exc.msg})") from None


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# -- gen ------------------------------------------------------------------------------


def _gen_env(args) -> dict:
    env = {"name": "cli", "kind": args.env, **json.loads(json.dumps(DEFAULT_GEN[args.env]))}
    if args.config:
        file_env = load_config(args.config)
        if file_env.get("kind", args.env) != args.env:
            raise UsageError(f"{args.config}: kind {file_env['kind']!r} does not match --env {args.env}")
        if "segments" in file_env:
            env.pop("random_walk", None)
        env = merge(env, file_env)
    if args.segments is not None:
        env["segments"] = _json_arg(args.segments, "--segments")
        env.pop("random_walk", None)
    if args.env == "shifting-gaussian":
        if args.obs_variance is not None:
            env["obs_variance"] = args.obs_variance
        rw = env.get("random_walk")
        if rw is not None:
            if args.drift_variance is not None:
                rw["drift_variance"] = args.drift_variance
            if args.length is not None:
                rw["length"] = args.length
            if args.mu0 is not None:
                rw["mu0"] = args.mu0
    if args.env == "recall":
        for key in ("vocab_size", "length", "probe_fraction", "delay_distribution"):
            value = getattr(args, key)
            if value is not None:
                env[key] = value
    validate_environment(env, "environment")
    return env


def cmd_gen(args) -> int:
    env = _gen_env(args)
    seed = args.seed
    kind = args.env
    if kind == "biased-die":
        trace = gen_biased_die([SegmentSpec(s["duration"], probs=s["probs"]) for s in env["segments"]], seed)
        text, family, T = dumps_trace(trace), trace.family, len(trace)
    elif kind == "shifting-gaussian":
        if "segments" in env:
            mode = Piecewise(tuple(SegmentSpec(s["duration"], mean=s["mean"]) for s in env["segments"]))
        else:
            rw = env["random_walk"]
            mode = RandomWalk(rw["drift_variance"], rw["length"], rw.get("mu0", 0.0))
        trace = gen_shifting_gaussian(mode, env["obs_variance"], seed)
        text, family, T = dumps_trace(trace), trace.family, len(trace)
    else:
        events = gen_recall_task(env["vocab_size"], env["length"], env["probe_fraction"],
                                 env.get("delay_distribution", "uniform"), seed)
        meta = {k: env[k] for k in ("vocab_size", "length", "probe_fraction")}
        meta.update(generator="recall", seed=seed, delay_distribution=env.get("delay_distribution", "uniform"))
        text, family, T = dumps_events(events, meta), "recall", len(events)
    _emit(text, args.out)
    if args.out is not None:
        print(f"T={T} family={family} seed={seed} -> {args.out}")
    return EXIT_OK


# -- calibrate ------------------------------------------------------------------------


def _filter_spec(family: str, prior_arg: str | None, k: int | None, obs_variance: float) -> FilterSpec:
    prior = _json_arg(prior_arg, "--prior") if prior_arg else None
    if family == CATEGORICAL:
        alpha = prior if prior is not None else [1.0] * k
        if not isinstance(alpha, list) or len(alpha) != k:
            raise UsageError(f"--prior must be a list of {k} Dirichlet concentrations")
        return FilterSpec.categorical(alpha=alpha)
    prior = prior if prior is not None else DEFAULT_GAUSSIAN_PRIOR
    if not isinstance(prior, dict) or set(prior) != {"mean", "var"}:
        raise UsageError('--prior for a gaussian filter must look like {"mean": 0, "var": 100}')
    return FilterSpec.gaussian(prior["mean"], prior["var"], obs_variance=obs_variance)


def cmd_calibrate(args) -> int:
    subject = subject_from_records(read_records(args.subject))
    trace_records = read_records(args.trace)
    observations = observations_from_records(trace_records)
    family = args.family or subject.family
    if family != subject.family:
        raise UsageError(f"--family {family} does not match the subject file ({subject.family})")
    if len(subject) != len(observations):
        raise UsageError(f"subject has {len(subject)} steps but the trace has {len(observations)}")

    obs_variance = args.obs_variance
    if obs_variance is None and family == GAUSSIAN:
        header = trace_records[0].get("header", {}) if trace_records else {}
        obs_variance = header.get("meta", {}).get("obs_variance", 1.0)
    k = subject.values.shape[1] if family == CATEGORICAL else None
    spec = _filter_spec(family, args.prior, k, obs_variance)
    result = calibrate_gamma(subject, observations, spec, tol=args.tol, floor=args.floor)
    text = json.dumps(result.to_dict(), indent=2) + "\n"
    _emit(text, args.out)
    if args.out is not None:
        print(f"gamma*={result.gamma_star:.6f} objective={result.objective_value:.6g} "
              f"evaluations={result.evaluations} status={result.status}")
    if result.status != "ok":
        print(f"warning: calibration status {result.status!r}; gamma* defaulted to 1", file=sys.stderr)
        return EXIT_WARNING
    return EXIT_OK


# -- sample ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    history = history_from_records(read_records(args.context))
    if len(history) == 0:
        raise UsageError("context file is empty")
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    if args.lam < 0:
        raise UsageError("--lambda must be >= 0")
    if args.queries < 1:
        raise UsageError("--queries must be >= 1")
    rng = np.random.default_rng(args.seed)
    shaped = pmp_sample(history, args.lam, args.k, rng)
    if args.queries == 1:
        text = dumps_records(context_to_records(shaped))
    else:
        records = []
        for q in range(1, args.queries + 1):
            if args.resample and q > 1:
                shaped = pmp_sample(history, args.lam, args.k, rng)
            records.extend({"query": q, **rec} for rec in context_to_records(shaped))
        text = dumps_records(records)
    _emit(text, args.out)
    if args.out is not None:
        print(f"kept {len(shaped)} of {len(history)} items (lambda={args.lam}, k={args.k}, seed={args.seed})")
    return EXIT_OK


# -- bench ----------------------------------------------------------------------------


def cmd_bench(args) -> int:
    raw = load_config(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.seeds is not None:
        raw["trials"] = args.seeds
    cfg = merge(default_config(), raw)
    report = compare_methods(raw, trial_seeds(cfg["seed"], cfg["trials"]), workers=args.workers)
    if args.out is None:
        sys.stdout.write(report.to_json())
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


# -- fit-curve ------------------------------------------------------------------------


def _read_curve_csv(path: str) -> list[tuple[float, float]]:
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                d, acc = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise UsageError(f"{path}:{lineno}: expected 'delay,accuracy'") from None
            points.append((d, acc))
    return points


def cmd_fit_curve(args) -> int:
    exp_fit, pow_fit = fit_forgetting_curve(_read_curve_csv(args.input))
    doc = {"exponential": exp_fit.to_dict(), "power": pow_fit.to_dict()}
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    if args.out is not None:
        print(f"exponential s={exp_fit.params['s']:.6g} rmse={exp_fit.rmse:.4g}; "
              f"power b={pow_fit.params['b']:.6g} rmse={pow_fit.rmse:.4g}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="forgetbayes", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic trace", formatter_class=fmt,
                       description="Generate a synthetic stream. Defaults: biased-die K=6 with 3 segments of 500 "
                                   "steps; shifting-gaussian random walk drift 0.01, obs variance 1, length 1500; "
                                   "recall vocab 20, length 2000, probe fraction 0.2.")
    p.add_argument("--env", choices=sorted(DEFAULT_GEN), default="biased-die", help="which generator to run")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", help="output file (JSONL); standard output when omitted")
    p.add_argument("--config", help="JSON file with environment settings; flags override it")
    p.add_argument("--segments", help="JSON list of {duration, probs} (die) or {duration, mean} (gaussian)")
    p.add_argument("--obs-variance", type=float, help="gaussian observation variance (default 1.0)")
    p.add_argument("--drift-variance", type=float, help="random-walk increment variance (default 0.01)")
    p.add_argument("--length", type=int, help="stream length for random walk (1500) or recall (2000)")
    p.add_argument("--mu0", type=float, help="random-walk start (default 0.0)")
    p.add_argument("--vocab-size", type=int, help="recall vocabulary size (default 20)")
    p.add_argument("--probe-fraction", type=float, help="recall probe probability (default 0.2)")
    p.add_argument("--delay-distribution", help="recall probe choice: uniform | geometric:<p> (default uniform)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("calibrate", help="fit the discount factor to a subject trace", formatter_class=fmt)
    p.add_argument("--subject", required=True, help="JSONL of {t, dist} or {t, mean, var}")
    p.add_argument("--trace", required=True, help="JSONL trace from 'gen' or a file of {t, obs}")
    p.add_argument("--family", choices=[CATEGORICAL, GAUSSIAN], help="defaults to the subject file's family")
    p.add_argument("--prior", help='JSON prior: Dirichlet list (default uniform) or {"mean": 0, "var": 100}')
    p.add_argument("--obs-variance", type=float,
                   help="gaussian observation variance (default: from the trace header, else 1.0)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="final bracket width")
    p.add_argument("--floor", type=float, default=DEFAULT_SEARCH_FLOOR, help="smallest discount searched")
    p.add_argument("--out", help="write the result JSON here instead of standard output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sample", help="shape a context with recency-weighted sampling", formatter_class=fmt)
    p.add_argument("--context", required=True, help="JSONL of {index, text}")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="forgetting rate per item")
    p.add_argument("--k", type=int, default=10, help="number of items to keep")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--queries", type=int, default=1, help="number of shaped contexts to emit")
    p.add_argument("--resample", action="store_true",
                   help="draw a fresh context per query instead of reusing the first")
    p.add_argument("--out", help="output file (JSONL); standard output when omitted")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", help="compare full, window and PMP contexts", formatter_class=fmt,
                       description="Run the benchmark. Default config: drift-die, stationary-die, drift-gaussian "
                                   "and recall environments; window k=50; pmp lambda=0.05, k=50; 20 trials, seed 0.")
    p.add_argument("--config", help="JSON run config; omitted keys take the built-in defaults")
    p.add_argument("--seeds", type=int, help="number of trials (default 20)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for trials")
    p.add_argument("--out", help="directory for report.json and report.csv; JSON to standard output when omitted")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit-curve", help="fit exponential and power forgetting curves", formatter_class=fmt)
    p.add_argument("--input", required=True, help="CSV of delay,accuracy (header optional)")
    p.add_argument("--out", help="write the fit JSON here instead of standard output")
    p.set_defaults(func=cmd_fit_curve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
