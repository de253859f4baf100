"""Mode exploration: approximate maximization of the unnormalized
log-probability, unconstrained and with an exact-cardinality constraint.

The objective f(A) = tr phi(L[A]) is submodular in the repulsive regime
(boxcox lam in [0,1]), where the two-pointer algorithm carries its 1/3
(deterministic) and 1/2 (randomized, in expectation) guarantees for
nonnegative functions; here the guarantees apply after shifting f by its
minimum.  Outside that regime everything still runs as a heuristic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import Subset, trace_phi_many
from .model import Dkpp, subset_log_weights, unnorm_logprob

__all__ = [
    "OptResult",
    "double_greedy",
    "exhaustive_mode",
    "greedy_mode",
    "random_greedy_cardinality",
]

EXHAUSTIVE_CAP = 20

# Stand-in for -inf objective values inside the greedy arithmetic: keeps
# zero-probability states maximally repellent without NaN propagation.
_NEG_SENTINEL = -1e12


@dataclass(frozen=True)
class OptResult:
    """A candidate mode: the subset, its freshly evaluated objective
    (unnormalized log-probability), the method that produced it, and the
    seed when the method is randomized."""

    subset: Subset
    objective: float
    method: str
    seed: int | None = None


def _result(model: Dkpp, items, method: str, seed=None) -> OptResult:
    subset = items if isinstance(items, Subset) else Subset(items)
    return OptResult(subset, unnorm_logprob(model, subset), method, seed)


def _finite(value: float) -> float:
    return _NEG_SENTINEL if np.isneginf(value) else value


def exhaustive_mode(model: Dkpp, cap: int = EXHAUSTIVE_CAP) -> OptResult:
    """Global argmax over all 2^N subsets; ties break toward the
    lexicographically smallest item tuple (so the empty set wins a full tie)."""
    f = subset_log_weights(model, cap)
    best_val = float(np.max(f))
    best = None
    for mask in np.flatnonzero(f == best_val):
        items = Subset.from_mask(int(mask)).items
        if best is None or items < best:
            best = items
    return _result(model, Subset(best), "exhaustive")


def _gains(model: Dkpp, current_items: tuple, current_val: float, candidates) -> np.ndarray:
    rows = [np.array(current_items + (i,), dtype=np.intp) for i in candidates]
    vals = trace_phi_many(model.kernel, rows, model.phi)
    return np.array([_finite(v) - current_val for v in vals])


def greedy_mode(model: Dkpp) -> OptResult:
    """Plain greedy ascent from the empty set.

    Repeatedly adds the item with the largest strictly positive marginal
    gain (lowest index on ties) and stops when none remains, so the
    objective never drops below the empty set's 0.
    """
    chosen: tuple = ()
    val = 0.0
    remaining = list(range(model.n))
    while remaining:
        gains = _gains(model, chosen, val, remaining)
        j = int(np.argmax(gains))
        if gains[j] <= 0:
            break
        chosen = tuple(sorted(chosen + (remaining[j],)))
        val += gains[j]
        remaining.pop(j)
    return _result(model, chosen, "greedy")


def double_greedy(model: Dkpp, randomized: bool = False, seed: int = 0) -> OptResult:
    """Two-pointer ascent from (empty, full) for unconstrained maximization.

    For each item i in index order, a_i is the gain of adding i to the
    lower set X and b_i the gain of dropping i from the upper set Y.  The
    deterministic variant keeps i iff a_i >= b_i; the randomized variant
    keeps it with probability a+/(a+ + b+), including on a double zero.
    -inf objective values enter the arithmetic as a large negative
    sentinel.  Guarantees (1/3 deterministic, 1/2 randomized in
    expectation) hold for nonnegative submodular objectives.
    """
    n = model.n
    rng = np.random.default_rng(seed) if randomized else None
    x: tuple = ()
    y = tuple(range(n))
    fx = 0.0
    fy = _finite(unnorm_logprob(model, Subset(y)))
    for i in range(n):
        x_with = tuple(sorted(x + (i,)))
        y_without = tuple(j for j in y if j != i)
        fx_with = _finite(unnorm_logprob(model, Subset(x_with)))
        fy_without = _finite(unnorm_logprob(model, Subset(y_without)))
        a = fx_with - fx
        b = fy_without - fy
        if randomized:
            ap, bp = max(a, 0.0), max(b, 0.0)
            include = True if ap + bp == 0 else rng.random() < ap / (ap + bp)
        else:
            include = a >= b
        if include:
            x, fx = x_with, fx_with
        else:
            y, fy = y_without, fy_without
    return _result(model, x, "double-greedy-random" if randomized else "double-greedy", seed if randomized else None)


def random_greedy_cardinality(model: Dkpp, k: int, seed: int = 0) -> OptResult:
    """Randomized greedy selection of exactly k items.

    Each of the k rounds forms the pool of the k best remaining items by
    marginal gain (lowest index on ties, padded by zero-gain dummy slots
    when fewer than k items remain) and admits one pool member uniformly
    at random; dummy slots are redrawn so exactly k real items come back.
    On a repulsive model this is the standard generator of well-spread
    high-probability subsets.
    """
    n = model.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    chosen: tuple = ()
    val = 0.0
    remaining = list(range(n))
    for _ in range(k):
        gains = _gains(model, chosen, val, remaining)
        order = np.lexsort((remaining, -gains))
        pool = [remaining[j] for j in order[:k]]
        while True:
            slot = int(rng.integers(k))
            if slot < len(pool):
                pick = pool[slot]
                break
        val += gains[remaining.index(pick)]
        chosen = tuple(sorted(chosen + (pick,)))
        remaining.remove(pick)
    return _result(model, chosen, "random-greedy", seed)
