"""Synthetic non-stationary streams with their generating distribution recorded.

Three probes are provided:

* a biased die whose face probabilities change between segments,
* a Gaussian whose mean is piecewise constant or follows a random walk,
* a key-value recall task with variable delays between presentation and probe.

Every generator takes an explicit seed and draws from its own
``numpy.random.Generator``; the same arguments always give the same stream.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filters import CATEGORICAL, GAUSSIAN
from .jsonl import FormatError, dumps_records, loads_records

__all__ = [
    "SegmentSpec",
    "EnvTrace",
    "Piecewise",
    "RandomWalk",
    "RecallEvent",
    "DEFAULT_DIE_SEGMENTS",
    "derive_seed",
    "gen_biased_die",
    "gen_shifting_gaussian",
    "gen_recall_task",
    "recall_answers",
    "dumps_trace",
    "loads_trace",
    "dumps_events",
    "loads_events",
]

RECALL = "recall"


@dataclass(frozen=True)
class SegmentSpec:
    duration: int
    probs: tuple[float, ...] | None = None
    mean: float | None = None

    def __post_init__(self):
        if isinstance(self.duration, bool) or int(self.duration) != self.duration or self.duration < 1:
            raise ValueError(f"segment duration must be a positive integer, got {self.duration!r}")
        if (self.probs is None) == (self.mean is None):
            raise ValueError("a segment carries either probs (die) or a mean (gaussian)")
        if self.probs is not None:
            p = tuple(float(x) for x in self.probs)
            if len(p) < 2:
                raise ValueError("segment probs need at least two faces")
            if any(not math.isfinite(x) or x < 0 for x in p):
                raise ValueError(f"segment probs must be finite and >= 0, got {list(p)}")
            if abs(math.fsum(p) - 1.0) > 1e-9:
                raise ValueError(f"segment probs sum to {math.fsum(p)!r}, not 1")
            object.__setattr__(self, "probs", p)
        elif not math.isfinite(self.mean):
            raise ValueError(f"segment mean must be finite, got {self.mean!r}")


DEFAULT_DIE_SEGMENTS = (
    SegmentSpec(500, (0.5, 0.1, 0.1, 0.1, 0.1, 0.1)),
    SegmentSpec(500, (0.1, 0.1, 0.1, 0.5, 0.1, 0.1)),
    SegmentSpec(500, (0.1, 0.1, 0.1, 0.1, 0.1, 0.5)),
)


@dataclass(frozen=True, eq=False)
class EnvTrace:
    """Observations with the distribution each one was drawn from.

    ``truths`` is ``T x K`` face probabilities for a die trace or ``T x 2``
    ``(mean, variance)`` rows for a Gaussian trace.
    """

    family: str
    observations: np.ndarray
    truths: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        obs = np.asarray(self.observations)
        truths = np.asarray(self.truths, dtype=float)
        if obs.ndim != 1 or truths.ndim != 2 or truths.shape[0] != obs.shape[0]:
            raise ValueError("observations and truths must have equal length")
        if self.family == CATEGORICAL:
            obs = obs.astype(np.int64)
            k = truths.shape[1]
            if obs.size and (obs.min() < 1 or obs.max() > k):
                raise ValueError(f"die faces must lie in 1..{k}")
            if obs.size and np.any(truths[np.arange(obs.size), obs - 1] <= 0):
                raise ValueError("an observation has zero probability under its truth")
        elif self.family == GAUSSIAN:
            obs = obs.astype(float)
            if truths.shape[1] != 2 or np.any(truths[:, 1] <= 0):
                raise ValueError("gaussian truths are (mean, variance > 0) rows")
        else:
            raise ValueError(f"unknown family {self.family!r}")
        obs.setflags(write=False)
        truths.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "truths", truths)

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def k(self) -> int:
        return self.truths.shape[1]


def derive_seed(master_seed: int, trial_index: int) -> int:
    """Seed for one trial; serial and parallel runs derive the same value."""
    return int(master_seed) ^ int(trial_index)


def gen_biased_die(segments: Sequence[SegmentSpec], seed: int) -> EnvTrace:
    segments = list(segments)
    if not segments:
        raise ValueError("need at least one segment")
    for i, seg in enumerate(segments):
        if seg.probs is None:
            raise ValueError(f"segment {i}: biased die segments need probs")
    k = len(segments[0].probs)
    for i, seg in enumerate(segments):
        if len(seg.probs) != k:
            raise ValueError(f"segment {i}: has {len(seg.probs)} faces, segment 0 has {k}")

    rng = np.random.default_rng(seed)
    obs, truths = [], []
    for seg in segments:
        p = np.array(seg.probs)
        obs.append(rng.choice(k, size=seg.duration, p=p / p.sum()) + 1)
        truths.append(np.broadcast_to(p, (seg.duration, k)))
    meta = {
        "generator": "biased-die",
        "seed": int(seed),
        "segments": [{"duration": s.duration, "probs": list(s.probs)} for s in segments],
    }
    return EnvTrace(CATEGORICAL, np.concatenate(obs), np.vstack(truths), meta)


@dataclass(frozen=True)
class Piecewise:
    segments: tuple[SegmentSpec, ...]


@dataclass(frozen=True)
class RandomWalk:
    drift_variance: float
    length: int
    mu0: float = 0.0


def gen_shifting_gaussian(mode: Piecewise | RandomWalk, obs_variance: float, seed: int) -> EnvTrace:
    """Gaussian observations around a mean that shifts over time.

    ``Piecewise`` holds the mean constant within each segment.  ``RandomWalk``
    starts at ``mu0`` and adds ``N(0, drift_variance)`` increments each step.
    """
    obs_variance = float(obs_variance)
    if not (math.isfinite(obs_variance) and obs_variance > 0):
        raise ValueError(f"observation variance must be > 0, got {obs_variance!r}")
    rng = np.random.default_rng(seed)
    if isinstance(mode, Piecewise):
        if not mode.segments:
            raise ValueError("need at least one segment")
        for i, seg in enumerate(mode.segments):
            if seg.mean is None:
                raise ValueError(f"segment {i}: gaussian segments need a mean")
        mu = np.concatenate([np.full(s.duration, float(s.mean)) for s in mode.segments])
        meta_mode = {"piecewise": [{"duration": s.duration, "mean": float(s.mean)} for s in mode.segments]}
    elif isinstance(mode, RandomWalk):
        q2 = float(mode.drift_variance)
        if not (math.isfinite(q2) and q2 >= 0):
            raise ValueError(f"drift variance must be >= 0, got {q2!r}")
        if int(mode.length) != mode.length or mode.length < 1:
            raise ValueError(f"length must be a positive integer, got {mode.length!r}")
        steps = rng.normal(0.0, math.sqrt(q2), size=mode.length - 1)
        mu = float(mode.mu0) + np.concatenate([[0.0], np.cumsum(steps)])
        meta_mode = {"random_walk": {"drift_variance": q2, "length": int(mode.length), "mu0": float(mode.mu0)}}
    else:
        raise TypeError(f"unknown gaussian mode {mode!r}")

    x = rng.normal(mu, math.sqrt(obs_variance))
    truths = np.column_stack([mu, np.full(mu.size, obs_variance)])
    meta = {"generator": "shifting-gaussian", "seed": int(seed), "obs_variance": obs_variance, **meta_mode}
    return EnvTrace(GAUSSIAN, x, truths, meta)


# -- associative recall -----------------------------------------------------------


@dataclass(frozen=True)
class RecallEvent:
    kind: str  # "present" or "probe"
    key: int
    value: int | None = None
    delay: int | None = None


def _parse_delay_distribution(spec) -> float | None:
    """``"uniform"`` -> None; ``"geometric:p"`` -> p."""
    if spec in (None, "uniform"):
        return None
    if isinstance(spec, str) and spec.startswith("geometric:"):
        p = float(spec.split(":", 1)[1])
        if not 0 < p <= 1:
            raise ValueError(f"geometric delay parameter must lie in (0, 1], got {p!r}")
        return p
    raise ValueError(f"delay distribution must be 'uniform' or 'geometric:<p>', got {spec!r}")


def gen_recall_task(
    vocab_size: int,
    length: int,
    probe_fraction: float,
    delay_distribution: str = "uniform",
    seed: int = 0,
) -> list[RecallEvent]:
    """Interleaved key-value presentations and probes.

    Presentations bind a uniformly drawn key to a uniformly drawn value,
    replacing any earlier binding of that key.  With probability
    ``probe_fraction`` a step is instead a probe.  Under ``"uniform"`` the
    probed key is drawn uniformly from the keys presented so far; under
    ``"geometric:p"`` a lag ``d ~ Geometric(p)`` is drawn and the key of the
    latest presentation at least ``d`` steps back is probed.  Either way the
    recorded delay is the number of steps since the probed key was last
    presented.  The first step is always a presentation.
    """
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    if int(length) != length or length < 1:
        raise ValueError(f"length must be a positive integer, got {length!r}")
    if not 0 <= probe_fraction < 1:
        raise ValueError(f"probe_fraction must lie in [0, 1), got {probe_fraction!r}")
    geometric_p = _parse_delay_distribution(delay_distribution)

    rng = np.random.default_rng(seed)
    events: list[RecallEvent] = []
    last_seen: dict[int, int] = {}
    present_steps: list[int] = []
    present_keys: list[int] = []
    for t in range(1, int(length) + 1):
        is_probe = rng.random() < probe_fraction and t > 1
        if not is_probe:
            key = int(rng.integers(vocab_size))
            value = int(rng.integers(vocab_size))
            last_seen[key] = t
            present_steps.append(t)
            present_keys.append(key)
            events.append(RecallEvent("present", key, value=value))
            continue
        if geometric_p is None:
            keys = sorted(last_seen)
            key = keys[int(rng.integers(len(keys)))]
        else:
            lag = int(rng.geometric(geometric_p))
            j = bisect.bisect_right(present_steps, max(t - lag, present_steps[0])) - 1
            key = present_keys[j]
        events.append(RecallEvent("probe", key, delay=t - last_seen[key]))
    return events


def recall_answers(events: Sequence[RecallEvent]) -> list[int | None]:
    """Correct answer for every event: the latest value bound to a probed key."""
    binding: dict[int, int] = {}
    out: list[int | None] = []
    for ev in events:
        if ev.kind == "present":
            binding[ev.key] = ev.value
            out.append(None)
        else:
            out.append(binding[ev.key])
    return out


# -- serialization ---------------------------------------------------------------


def _truth_record(family: str, row: np.ndarray) -> dict:
    if family == CATEGORICAL:
        return {"probs": [float(x) for x in row]}
    return {"mean": float(row[0]), "var": float(row[1])}


def dumps_trace(trace: EnvTrace) -> str:
    header = {"header": {"family": trace.family, "T": len(trace), "meta": trace.meta}}
    cast = int if trace.family == CATEGORICAL else float
    records = [header]
    for t, (obs, truth) in enumerate(zip(trace.observations, trace.truths), start=1):
        records.append({"t": t, "obs": cast(obs), "truth": _truth_record(trace.family, truth)})
    return dumps_records(records)


def loads_trace(text: str, source: str = "<trace>") -> EnvTrace:
    records = loads_records(text, source)
    if not records or "header" not in records[0]:
        raise FormatError(f"{source}: first record must be a header")
    header = records[0]["header"]
    family = header.get("family")
    body = records[1:]
    obs, truths = [], []
    for i, rec in enumerate(body, start=1):
        if rec.get("t") != i:
            raise FormatError(f"{source}: record {i} has t={rec.get('t')!r}, expected {i}")
        try:
            truth = rec["truth"]
            obs.append(rec["obs"])
            truths.append(truth["probs"] if family == CATEGORICAL else [truth["mean"], truth["var"]])
        except (KeyError, TypeError):
            raise FormatError(f"{source}: record {i} is missing obs/truth fields") from None
    if header.get("T") != len(body):
        raise FormatError(f"{source}: header says T={header.get('T')!r} but {len(body)} records follow")
    width = 2 if family == GAUSSIAN else (len(truths[0]) if truths else 2)
    truths_arr = np.array(truths, dtype=float).reshape(len(body), width)
    return EnvTrace(family, np.array(obs), truths_arr, header.get("meta", {}))


def dumps_events(events: Sequence[RecallEvent], meta: dict | None = None) -> str:
    records = [{"header": {"family": RECALL, "T": len(events), "meta": meta or {}}}]
    for t, ev in enumerate(events, start=1):
        rec = {"t": t, "kind": ev.kind, "key": ev.key}
        if ev.kind == "present":
            rec["value"] = ev.value
        else:
            rec["delay"] = ev.delay
        records.append(rec)
    return dumps_records(records)


def loads_events(text: str, source: str = "<events>") -> list[RecallEvent]:
    records = loads_records(text, source)
    if not records or records[0].get("header", {}).get("family") != RECALL:
        raise FormatError(f"{source}: not a recall event file")
    events = []
    for rec in records[1:]:
        if rec.get("kind") == "present":
            events.append(RecallEvent("present", rec["key"], value=rec["value"]))
        elif rec.get("kind") == "probe":
            events.append(RecallEvent("probe", rec["key"], delay=rec["delay"]))
        else:
            raise FormatError(f"{source}: record t={rec.get('t')!r} has unknown kind {rec.get('kind')!r}")
    return events
