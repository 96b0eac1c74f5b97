"""Probabilistic memory prompting: recency-weighted subsampling of a context.

A history of ``t`` items is reduced to ``k`` items drawn without replacement,
item ``i`` weighted by ``exp(-lam * (t - i))``.  Selection uses one random key
per item and keeps the ``k`` best keys, which gives the same distribution over
subsets as drawing items one at a time in proportion to the remaining weight.
The kept items are returned oldest first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .kernel import forgetting_weights

__all__ = [
    "ContextItem",
    "ContextHistory",
    "ShapedContext",
    "sample_indices",
    "pmp_sample",
    "first_pick_marginal",
    "truncate_window",
    "history_from_records",
    "context_to_records",
]


@dataclass(frozen=True)
class ContextItem:
    index: int
    text: str


@dataclass(frozen=True)
class ContextHistory:
    items: tuple[ContextItem, ...]

    def __post_init__(self):
        items = tuple(self.items)
        for pos, item in enumerate(items, start=1):
            if item.index != pos:
                raise ValueError(f"context indices must run 1..t in order; position {pos} has index {item.index}")
        object.__setattr__(self, "items", items)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "ContextHistory":
        return cls(tuple(ContextItem(i, s) for i, s in enumerate(texts, start=1)))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[ContextItem]:
        return iter(self.items)


@dataclass(frozen=True)
class ShapedContext:
    items: tuple[ContextItem, ...]

    def __post_init__(self):
        items = tuple(self.items)
        idx = [it.index for it in items]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("shaped context must keep source indices strictly increasing")
        object.__setattr__(self, "items", items)

    @property
    def indices(self) -> list[int]:
        return [it.index for it in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[ContextItem]:
        return iter(self.items)


def sample_indices(weights: np.ndarray, k: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``k`` distinct 0-based positions with probability driven by ``weights``.

    Each position gets the key ``ln(u) / w`` with ``u ~ U(0, 1)`` and the
    ``k`` largest keys win.  The ranking is computed as the equivalent
    ``ln(-ln u) - ln w`` (smaller wins) so tiny weights cannot overflow.

    With ``size`` set, returns a ``size x k`` array of independent draws.
    Positions within a draw are in key order, not sorted.
    """
    w = np.asarray(weights, dtype=float)
    t = w.size
    if not 1 <= k <= t:
        raise ValueError(f"need 1 <= k <= {t}, got {k}")
    shape = (t,) if size is None else (size, t)
    u = rng.random(shape)
    with np.errstate(divide="ignore"):
        keys = np.log(-np.log(u)) - np.log(w)
    if k == 1:
        return np.argmin(keys, axis=-1)[..., None]
    order = np.argsort(keys, axis=-1, kind="stable")
    return order[..., :k]


def _check_request(history: ContextHistory, k: int) -> int:
    t = len(history)
    if t == 0:
        raise ValueError("cannot shape an empty context history")
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"target size k must be a positive integer, got {k!r}")
    return t


def pmp_sample(history: ContextHistory, lam: float, k: int, rng: np.random.Generator) -> ShapedContext:
    """Keep ``k`` items of ``history`` drawn under exponential recency weights.

    If ``k >= len(history)`` the whole history is returned and ``rng`` is not
    advanced.
    """
    t = _check_request(history, k)
    w = forgetting_weights(t, lam)
    if k >= t:
        return ShapedContext(history.items)
    picked = np.sort(sample_indices(w, int(k), rng))
    return ShapedContext(tuple(history.items[i] for i in picked))


def first_pick_marginal(history: ContextHistory, lam: float, rng: np.random.Generator, trials: int) -> np.ndarray:
    """Empirical frequency with which each item is chosen when ``k = 1``."""
    t = _check_request(history, 1)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    w = forgetting_weights(t, lam)
    counts = np.zeros(t, dtype=np.int64)
    chunk = max(1, 2_000_000 // t)
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        picks = sample_indices(w, 1, rng, size=n)[:, 0]
        counts += np.bincount(picks, minlength=t)
        done += n
    return counts / trials


def truncate_window(history: ContextHistory, k: int) -> ShapedContext:
    """The last ``min(k, t)`` items, oldest first."""
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"window size k must be a positive integer, got {k!r}")
    return ShapedContext(history.items[-int(k):])


def history_from_records(records) -> ContextHistory:
    """History from ``{"index", "text"}`` records, which must be numbered 1..t."""
    items = []
    for pos, rec in enumerate(records, start=1):
        if not isinstance(rec.get("index"), int) or not isinstance(rec.get("text"), str):
            raise ValueError(f"context record {pos} needs an integer index and a string text")
        items.append(ContextItem(rec["index"], rec["text"]))
    return ContextHistory(tuple(items))


def context_to_records(items: Iterable[ContextItem]) -> list[dict]:
    return [{"index": it.index, "text": it.text} for it in items]
