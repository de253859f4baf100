"""Kernel learning from observed subsets by ratio matching.

The objective compares each observed basket against its one-bit flips, so
no normalizer ever appears: with u the weight ratio between a basket and
its flip, each pair contributes (1/(1+u))^2, evaluated stably as a
sigmoid of the log ratio.  Gradients are analytical: the derivative of
tr phi(L[A]) with respect to L is phi'(L[A]) scattered back into the big
matrix, which costs only the cube of the basket size per pair.  Training
uses minibatch SGD over (basket, item) pairs, so the step cost does not
grow with the dataset.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .kernel import (
    EigensolverError,
    KernelMatrix,
    SpectralFunction,
    Subset,
    _clamp_small,
    phi_from_text,
    phi_to_text,
    trace_phi_many,
)

__all__ = [
    "BasketDataset",
    "FactorizedKernel",
    "TrainConfig",
    "flip",
    "load_baskets",
    "load_factor",
    "ratio_matching_grad_l",
    "ratio_matching_grad_v",
    "ratio_matching_loss",
    "save_baskets",
    "save_factor",
    "sgd_fit",
]

# A trace evaluation subsample replaces the full loss in the trace when the
# full pair count exceeds this.
_EVAL_PAIR_BUDGET = 100_000
_EVAL_PAIR_LIMIT = 1_000_000


@dataclass(frozen=True)
class BasketDataset:
    """M observed subsets over a ground set of n_items."""

    n_items: int
    baskets: tuple

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("n_items must be positive")
        baskets = tuple(self.baskets)
        if not baskets:
            raise ValueError("dataset must contain at least one basket")
        for b in baskets:
            if b.items and b.items[-1] >= self.n_items:
                raise ValueError(f"basket item {b.items[-1]} out of range")
        object.__setattr__(self, "baskets", baskets)

    @property
    def n_baskets(self) -> int:
        return len(self.baskets)

    @property
    def max_basket_size(self) -> int:
        return max(len(b) for b in self.baskets)


@dataclass(frozen=True)
class FactorizedKernel:
    """Learnable factor V (N x D); the kernel L = V V^T is PSD by construction."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 2:
            raise ValueError("V must be a matrix")
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.v.shape[1]

    def kernel(self) -> KernelMatrix:
        l = self.v @ self.v.T
        return KernelMatrix((l + l.T) / 2.0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    n_iters: int = 1000
    batch_size: int = 100
    seed: int = 0
    phi: SpectralFunction = field(default_factory=lambda: SpectralFunction("boxcox", (0.5,)))
    rank: int = 8
    momentum: float = 0.0
    eval_every: int = 50

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.n_iters < 0:
            raise ValueError("need learning_rate >= 0, batch_size >= 1, n_iters >= 0")


def flip(a: Subset, n: int) -> Subset:
    """Symmetric difference with {n}: drop n if present, add it otherwise."""
    return a.minus(n) if n in a else a.union(n)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def _scatter_parts(entries: np.ndarray, phi: SpectralFunction, cache: dict, items: tuple):
    """(eigvecs, phi'(eigvals)) of L[items] for gradient scatter, memoized.

    phi' is evaluated lazily here, so loss-only evaluation never touches
    it; requesting it on a clamped-singular submatrix raises when phi' is
    unbounded at 0 (log, boxcox with lam < 1).
    """
    hit = cache.get(items)
    if hit is not None:
        return hit
    idx = np.array(items, dtype=np.intp)
    try:
        w, u = np.linalg.eigh(entries[np.ix_(idx, idx)])
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"symmetric eigensolver failed: {exc}") from exc
    out = (u, phi.derivative(_clamp_small(w)))
    cache[items] = out
    return out


def _full_pairs(data: BasketDataset):
    return [(m, n) for m in range(data.n_baskets) for n in range(data.n_items)]


def _pair_scale(data: BasketDataset, batch) -> float:
    # Full loss is (1/M) sum over all M*N pairs; a minibatch is rescaled so
    # its expectation over uniformly drawn pairs equals the full loss.
    if batch is None:
        return 1.0 / data.n_baskets
    return data.n_items / len(batch)


def _pair_deltas(l: KernelMatrix, phi, data, pairs) -> np.ndarray:
    """Trace difference between each basket and its one-item flip, batched."""
    unique_ms = sorted({m for m, _ in pairs})
    base = trace_phi_many(l, [data.baskets[m].indices for m in unique_ms], phi)
    base_tr = dict(zip(unique_ms, base))
    flip_tr = trace_phi_many(l, [flip(data.baskets[m], n).indices for m, n in pairs], phi)
    with np.errstate(invalid="ignore"):
        deltas = np.array([base_tr[m] for m, _ in pairs]) - flip_tr
    if np.any(np.isnan(deltas)):
        raise ValueError("ratio undefined: a basket and its flip both have probability 0")
    return deltas


def ratio_matching_loss(l: KernelMatrix, phi: SpectralFunction, data: BasketDataset, batch=None) -> float:
    """Ratio-matching objective: mean over baskets of the summed squared
    flip terms sigmoid(-delta)^2, where delta is the trace difference
    between the basket and its one-item flip.

    batch=None evaluates all M*N pairs; a list of (basket, item) pairs is
    rescaled to an unbiased estimate of the full loss.  Each term lies in
    (0, 1), so the full loss is bounded by the number of items.
    """
    if data.n_items != l.dim:
        raise ValueError("dataset and kernel disagree on the number of items")
    pairs = _full_pairs(data) if batch is None else list(batch)
    deltas = _pair_deltas(l, phi, data, pairs)
    terms = expit(-deltas) ** 2
    return float(_pair_scale(data, batch) * terms.sum())


def _grad_weights(deltas: np.ndarray) -> np.ndarray:
    # d/du of (1/(1+u))^2 times du/d(trace difference), in sigmoid form:
    # -2 u / (1+u)^3 = -2 sigmoid(delta) sigmoid(-delta)^2.
    return -2.0 * expit(deltas) * expit(-deltas) ** 2


def ratio_matching_grad_l(
    l: KernelMatrix, phi: SpectralFunction, data: BasketDataset, batch=None
) -> np.ndarray:
    """Gradient of ratio_matching_loss with respect to the kernel entries.

    Each pair scatters phi' of the basket submatrix (same eigenvectors,
    phi' of the eigenvalues) minus the flipped version back into the N x N
    frame, weighted by -2 u g(u)/(1+u)^2.  Requires phi' finite on every
    encountered eigenvalue, so log and boxcox(lam < 1) need nonsingular
    submatrices.
    """
    if data.n_items != l.dim:
        raise ValueError("dataset and kernel disagree on the number of items")
    entries = l.entries
    pairs = _full_pairs(data) if batch is None else list(batch)
    deltas = _pair_deltas(l, phi, data, pairs)
    weights = _grad_weights(deltas)
    cache: dict = {}
    grad = np.zeros_like(entries)
    for w_pair, (m, n) in zip(weights, pairs):
        for items, sign in ((data.baskets[m].items, 1.0), (flip(data.baskets[m], n).items, -1.0)):
            if not items:
                continue
            u, dphi = _scatter_parts(entries, phi, cache, items)
            idx = np.array(items, dtype=np.intp)
            grad[np.ix_(idx, idx)] += (sign * w_pair) * ((u * dphi) @ u.T)
    return _pair_scale(data, batch) * grad


def ratio_matching_grad_v(
    fk: FactorizedKernel, phi: SpectralFunction, data: BasketDataset, batch=None
) -> np.ndarray:
    """Gradient with respect to the factor V of L = V V^T: twice the kernel
    gradient times V, accumulated row-sparsely (only basket rows of V are
    touched per pair, never a dense N x N intermediate)."""
    l = fk.kernel()
    if data.n_items != l.dim:
        raise ValueError("dataset and kernel disagree on the number of items")
    entries = l.entries
    v = fk.v
    pairs = _full_pairs(data) if batch is None else list(batch)
    deltas = _pair_deltas(l, phi, data, pairs)
    weights = _grad_weights(deltas)
    cache: dict = {}
    grad = np.zeros_like(v)
    for w_pair, (m, n) in zip(weights, pairs):
        for items, sign in ((data.baskets[m].items, 1.0), (flip(data.baskets[m], n).items, -1.0)):
            if not items:
                continue
            u, dphi = _scatter_parts(entries, phi, cache, items)
            idx = np.array(items, dtype=np.intp)
            grad[idx] += (sign * w_pair) * ((u * dphi) @ (u.T @ v[idx]))
    return 2.0 * _pair_scale(data, batch) * grad


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------


def _eval_pairs(data: BasketDataset, rng) -> list | None:
    """Pairs used for the evaluation trace: all of them when affordable,
    otherwise a fixed seeded subsample so eval cost stays bounded."""
    total = data.n_baskets * data.n_items
    if total <= _EVAL_PAIR_LIMIT:
        return None
    ms = rng.integers(data.n_baskets, size=_EVAL_PAIR_BUDGET)
    ns = rng.integers(data.n_items, size=_EVAL_PAIR_BUDGET)
    return list(zip(ms.tolist(), ns.tolist()))


def sgd_fit(data: BasketDataset, config: TrainConfig):
    """Minibatch SGD on the factor V; returns (FactorizedKernel, trace).

    V starts from centered normal entries with standard deviation
    1/sqrt(rank), so the initial kernel diagonal sits near 1.  Each
    iteration draws batch_size (basket, item) pairs uniformly with
    replacement and takes one (optionally momentum-smoothed) step.  The
    trace records (iteration, loss, cumulative_sgd_wall_ms) at iteration 0,
    every eval_every iterations (0 disables intermediate rows), and at
    the end; the wall clock excludes evaluation time so per-iteration cost
    is read directly off the trace.  A non-finite loss aborts.
    """
    n, d = data.n_items, config.rank
    if d < 1:
        raise ValueError("rank must be positive")
    init_ss, batch_ss, eval_ss = np.random.SeedSequence(config.seed).spawn(3)
    v = np.random.default_rng(init_ss).normal(0.0, 1.0 / math.sqrt(d), size=(n, d))
    batch_rng = np.random.default_rng(batch_ss)
    eval_pairs = _eval_pairs(data, np.random.default_rng(eval_ss))

    trace = []
    sgd_seconds = 0.0

    def record(iteration):
        fk = FactorizedKernel(v.copy())
        loss = ratio_matching_loss(fk.kernel(), config.phi, data, eval_pairs)
        if not math.isfinite(loss):
            raise RuntimeError(
                f"training diverged: loss {loss} at iteration {iteration}; "
                "try a smaller learning rate"
            )
        trace.append((iteration, loss, sgd_seconds * 1e3))

    record(0)
    velocity = np.zeros_like(v)
    for it in range(1, config.n_iters + 1):
        start = time.perf_counter()
        ms = batch_rng.integers(data.n_baskets, size=config.batch_size)
        ns = batch_rng.integers(data.n_items, size=config.batch_size)
        batch = list(zip(ms.tolist(), ns.tolist()))
        grad = ratio_matching_grad_v(FactorizedKernel(v), config.phi, data, batch)
        velocity = config.momentum * velocity + grad
        v = v - config.learning_rate * velocity
        sgd_seconds += time.perf_counter() - start
        if config.eval_every and it % config.eval_every == 0 and it < config.n_iters:
            record(it)
    if config.n_iters:
        record(config.n_iters)
    return FactorizedKernel(v), trace


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_baskets(data: BasketDataset, path) -> None:
    """Write `N <count>` then one basket per line (blank line = empty basket)."""
    lines = [f"N {data.n_items}"]
    lines += [" ".join(str(i) for i in b.items) for b in data.baskets]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_baskets(path) -> BasketDataset:
    """Read a basket file written by save_baskets.

    `#` lines are comments; the first payload line must be `N <int>`; every
    later line is one basket of space-separated 0-based item indices, with
    a blank line standing for the empty basket.  Duplicate or out-of-range
    indices are rejected with the offending line number.
    """
    n_items = None
    baskets = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if n_items is None:
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] != "N":
                raise ValueError(f"{path}:{lineno}: expected 'N <int>' header, got {raw!r}")
            n_items = int(parts[1])
            continue
        try:
            items = [int(t) for t in line.split()]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-integer item in {raw!r}") from exc
        if len(set(items)) != len(items):
            raise ValueError(f"{path}:{lineno}: duplicate item in {raw!r}")
        if any(i < 0 or i >= n_items for i in items):
            raise ValueError(f"{path}:{lineno}: item out of range in {raw!r}")
        baskets.append(Subset(items))
    if n_items is None:
        raise ValueError(f"{path}: missing 'N <int>' header")
    return BasketDataset(n_items, tuple(baskets))


def save_factor(fk: FactorizedKernel, phi: SpectralFunction, path) -> None:
    """Factor file: phi descriptor, `N D` shape line, then the rows of V."""
    lines = [phi_to_text(phi), f"{fk.n} {fk.rank}"]
    for row in fk.v:
        lines.append(" ".join(format(x, ".17g") for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_factor(path):
    """Read a factor file written by save_factor; returns (FactorizedKernel, phi)."""
    rows = [r for r in Path(path).read_text(encoding="utf-8").splitlines() if r.strip()]
    if len(rows) < 2:
        raise ValueError(f"malformed factor file {path}")
    phi = phi_from_text(rows[0])
    n, d = (int(t) for t in rows[1].split())
    if len(rows) != n + 2:
        raise ValueError(f"expected {n} factor rows in {path}")
    v = np.array([[float(t) for t in r.split()] for r in rows[2:]])
    if v.shape != (n, d):
        raise ValueError(f"malformed factor rows in {path}")
    return FactorizedKernel(v), phi
