"""Variational and Monte Carlo inference: mean-field fits, the ELBO,
importance-sampled normalizers, and Rao-Blackwellized marginal and
conditional probability estimators.

All estimators are pure functions of (model, arguments, seed) and report
(value, std_error, n_samples, seed).  Estimators with a small enough
discrete domain switch to exhaustive summation and become exact, with
zero reported error.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .kernel import Subset, _check_subset, _trace_phi_indexed, trace_phi_many
from .model import (
    BernoulliProduct,
    Dkpp,
    _require_log_z,
    subset_log_weights,
    unnorm_logprob,
)

__all__ = [
    "EstimateWithError",
    "conditional_prob_between",
    "conditional_prob_given_cardinality",
    "elbo",
    "importance_log_partition",
    "marginal_gain",
    "mean_field_fit",
    "naive_marginal_between",
    "rb_marginal_between",
    "rb_marginal_cardinality",
]


@dataclass(frozen=True)
class EstimateWithError:
    """A point estimate with its standard error and sampling metadata.

    `value` is on the scale documented by each estimator (log scale for
    normalizer and interval-marginal estimates, probability scale for
    cardinality marginals and conditionals).  `exact` marks exhaustive
    summation, in which case std_error is 0.
    """

    value: float
    std_error: float
    n_samples: int
    seed: int | None = None
    exact: bool = False
    normalized: float | None = None
    note: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.std_error) and self.std_error >= 0):
            raise ValueError(f"std_error must be finite and nonnegative, got {self.std_error}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


def _log_mean(logw: np.ndarray):
    """log of the sample mean of exp(logw) and the relative standard error
    sd(w) / (sqrt(n) mean(w)), computed under a max shift.

    The relative error doubles as the delta-method standard error of the
    log of the estimate.  Returns (log_mean, rel_se, degenerate) where
    degenerate flags an all-zero sample.
    """
    n = logw.size
    m = float(np.max(logw)) if n else -np.inf
    if np.isneginf(m):
        return -np.inf, 0.0, True
    w = np.exp(logw - m)
    mean = float(w.mean())
    log_mean = m + math.log(mean)
    rel = 0.0 if n == 1 else float(w.std(ddof=1) / (math.sqrt(n) * mean))
    return log_mean, rel, False


def _subset_rows(xi: np.ndarray):
    """Index arrays of the True positions of each row of a boolean matrix."""
    return [np.flatnonzero(row) for row in xi]


# ---------------------------------------------------------------------------
# Marginal gains and the mean-field fit
# ---------------------------------------------------------------------------


def marginal_gain(model: Dkpp, i: int, a: Subset) -> float:
    """f(i | a) = tr phi(L[a + i]) - tr phi(L[a]), for i not in a.

    Extended-real conventions: -inf minus finite is -inf, finite minus
    -inf is +inf.  Both terms -inf (conditioning on a zero-probability
    set) is an error.
    """
    if i in a:
        raise ValueError(f"item {i} is already in the subset")
    t1 = unnorm_logprob(model, a.union(i))
    t0 = unnorm_logprob(model, a)
    if np.isneginf(t1) and np.isneginf(t0):
        raise ValueError("marginal gain undefined: both subsets have probability 0")
    return t1 - t0


def _gain_mean(t1: np.ndarray, t0: np.ndarray, weights: np.ndarray | None):
    """Average of t1 - t0, optionally mass-weighted, with extended reals.

    Any -inf or undefined gain carrying positive weight collapses the
    mean to -inf (the corresponding coordinate is then forced off).
    """
    with np.errstate(invalid="ignore"):
        gains = t1 - t0
    if weights is None:
        active = np.ones(gains.shape, dtype=bool)
    else:
        active = weights > 0
    bad = active & (np.isnan(gains) | np.isneginf(gains))
    if np.any(bad):
        return -np.inf
    if np.any(active & np.isposinf(gains)):
        return np.inf
    if weights is None:
        return float(gains.mean())
    return float(np.dot(weights[active], gains[active]))


def _expected_gain_exact(model: Dkpp, i: int, q: np.ndarray) -> float:
    """E[f(i | A)] with A drawn from the product measure on the other items,
    by full enumeration over 2^(N-1) assignments."""
    entries = model.kernel.entries
    coords = np.array([j for j in range(model.n) if j != i], dtype=np.intp)
    m = coords.size
    w = np.ones(1)
    for qj in q[coords]:
        w = np.concatenate([w * (1.0 - qj), w * qj])
    f0 = np.empty(1 << m)
    f1 = np.empty(1 << m)
    f0[0] = 0.0
    f1[0] = _trace_phi_indexed(entries, model.phi, np.array([[i]], dtype=np.intp))[0]
    for k in range(1, m + 1):
        local = np.array(list(itertools.combinations(range(m), k)), dtype=np.intp)
        masks = (1 << local).sum(axis=1)
        items = coords[local]
        f0[masks] = _trace_phi_indexed(entries, model.phi, items)
        with_i = np.hstack([items, np.full((items.shape[0], 1), i, dtype=np.intp)])
        f1[masks] = _trace_phi_indexed(entries, model.phi, with_i)
    return _gain_mean(f1, f0, w)


def _expected_gain_mc(model: Dkpp, i: int, q: np.ndarray, mc_samples: int, rng) -> float:
    """Monte Carlo version of _expected_gain_exact."""
    xi = rng.random((mc_samples, model.n)) < q
    xi[:, i] = False
    rows0 = _subset_rows(xi)
    rows1 = [np.append(r, i) for r in rows0]
    t = trace_phi_many(model.kernel, rows0 + rows1, model.phi)
    return _gain_mean(t[mc_samples:], t[:mc_samples], None)


def mean_field_fit(
    model: Dkpp,
    *,
    mc_samples: int = 64,
    max_sweeps: int = 50,
    tol: float = 1e-4,
    seed: int = 0,
    exact_below: int = 10,
) -> BernoulliProduct:
    """Best product-Bernoulli approximation by coordinate ascent.

    Starting from q = 0.5 everywhere, sweeps the coordinates in order and
    sets q_i to sigmoid of the expected marginal gain of item i under the
    current q of the other items.  The expectation is exact (enumeration
    over the 2^(N-1) assignments) when N - 1 <= exact_below, otherwise a
    Monte Carlo average over mc_samples draws.  Stops when no coordinate
    moved by tol, or after max_sweeps.  Deterministic per seed.

    A coordinate whose expected gain is -inf (flipping it on can reach a
    zero-probability set) is reported via a warning and pinned to q_i = 0.
    """
    if mc_samples < 1 or tol <= 0:
        raise ValueError("mc_samples must be >= 1 and tol > 0")
    n = model.n
    q = np.full(n, 0.5)
    rng = np.random.default_rng(seed)
    exact = (n - 1) <= exact_below
    warned = False
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(n):
            if exact:
                mu = _expected_gain_exact(model, i, q)
            else:
                mu = _expected_gain_mc(model, i, q, mc_samples, rng)
            if np.isneginf(mu) and not warned:
                warnings.warn(f"coordinate {i}: -inf expected gain, pinning q to 0")
                warned = True
            new = float(expit(mu))
            biggest = max(biggest, abs(new - q[i]))
            q[i] = new
        if biggest < tol:
            break
    return BernoulliProduct(q)


def elbo(
    model: Dkpp,
    q: BernoulliProduct,
    *,
    mc_samples: int = 1000,
    seed: int = 0,
    exact_below: int = 14,
) -> EstimateWithError:
    """Evidence lower bound H[Q_q] + E_Q[tr phi(L[A])] (<= log Z).

    The entropy term is closed form.  The expectation is the multilinear
    extension, summed exactly over 2^N subsets when N <= exact_below and
    estimated by Monte Carlo otherwise; only the Monte Carlo path carries
    sampling error.
    """
    if q.n != model.n:
        raise ValueError("q has the wrong length")
    h = q.entropy()
    if model.n <= exact_below:
        mass = q.mass_vector()
        f = subset_log_weights(model)
        active = mass > 0
        if np.any(active & np.isneginf(f)):
            return EstimateWithError(
                -np.inf, 0.0, int(active.sum()), seed=seed, exact=True,
                note="Q puts mass on zero-probability subsets",
            )
        val = h + float(np.dot(mass[active], f[active]))
        return EstimateWithError(val, 0.0, 1 << model.n, seed=seed, exact=True)
    rng = np.random.default_rng(seed)
    f = trace_phi_many(model.kernel, _subset_rows(q.sample(rng, mc_samples)), model.phi)
    if np.any(np.isneginf(f)):
        return EstimateWithError(
            -np.inf, 0.0, mc_samples, seed=seed,
            note="sampled a zero-probability subset",
        )
    se = 0.0 if mc_samples == 1 else float(f.std(ddof=1) / math.sqrt(mc_samples))
    return EstimateWithError(h + float(f.mean()), se, mc_samples, seed=seed)


# ---------------------------------------------------------------------------
# Normalizer estimation
# ---------------------------------------------------------------------------


def importance_log_partition(
    model: Dkpp, proposal: BernoulliProduct, n_samples: int, seed: int = 0
) -> EstimateWithError:
    """log Z estimated as the log of the mean importance weight.

    Z equals the expectation under any proposal Q of the ratio of the
    unnormalized weight to the proposal mass; the estimate is the sample
    mean of those ratios, computed with a max shift.  std_error is the
    delta-method error of the log estimate: sd(w) / (sqrt(n) mean(w)).
    The proposal must cover the model's support, or weights are biased
    low; with the exact product form of an affine model the weights are
    constant and the estimate is exact.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if proposal.n != model.n:
        raise ValueError("proposal has the wrong length")
    rng = np.random.default_rng(seed)
    xi = proposal.sample(rng, n_samples)
    logw = trace_phi_many(model.kernel, _subset_rows(xi), model.phi) - proposal.log_mass_rows(xi)
    log_mean, rel, degenerate = _log_mean(logw)
    note = ""
    if degenerate:
        note = "all sampled weights were zero"
    elif n_samples == 1:
        note = "single sample"
    return EstimateWithError(log_mean, rel, n_samples, seed=seed, note=note)


# ---------------------------------------------------------------------------
# Marginal probabilities
# ---------------------------------------------------------------------------


def _interval_parts(model: Dkpp, a_in: Subset, a_out: Subset):
    _check_subset(a_in, model.n)
    _check_subset(a_out, model.n)
    if not set(a_in.items) <= set(a_out.items):
        raise ValueError("a_in must be contained in a_out")
    free = np.array(sorted(set(a_out.items) - set(a_in.items)), dtype=np.intp)
    return a_in.indices, free


def rb_marginal_between(
    model: Dkpp,
    a_in: Subset,
    a_out: Subset,
    proposal: BernoulliProduct | None = None,
    n_samples: int = 1000,
    seed: int = 0,
    max_exhaustive_free: int = 20,
) -> EstimateWithError:
    """log of the unnormalized marginal of the event a_in <= A <= a_out.

    Pins the items of a_in on and everything outside a_out off, so only
    the free coordinates are random: each sample weighs the unnormalized
    subset weight by the proposal mass of the free bits only.  When the
    free set has at most max_exhaustive_free items the 2^|free| terms are
    summed directly (the proposal cancels) and the result is exact.

    If the model has a cached log Z the `normalized` field carries the
    marginal probability itself.
    """
    base, free = _interval_parts(model, a_in, a_out)
    if free.size <= max_exhaustive_free:
        rows = [
            np.concatenate([base, free[list(pick)]])
            for r in range(free.size + 1)
            for pick in itertools.combinations(range(free.size), r)
        ]
        logv = trace_phi_many(model.kernel, rows, model.phi)
        est = EstimateWithError(
            float(logsumexp(logv)), 0.0, len(rows), seed=seed, exact=True
        )
    else:
        if proposal is None:
            raise ValueError("a proposal is required when the free set is sampled")
        if proposal.n != model.n:
            raise ValueError("proposal has the wrong length")
        qf = proposal.q[free]
        if np.any(qf <= 0) or np.any(qf >= 1):
            raise ValueError("proposal must be strictly inside (0,1) on free coordinates")
        rng = np.random.default_rng(seed)
        xi = rng.random((n_samples, free.size)) < qf
        logq = np.where(xi, np.log(qf), np.log1p(-qf)).sum(axis=1)
        rows = [np.concatenate([base, free[np.flatnonzero(r)]]) for r in xi]
        logw = trace_phi_many(model.kernel, rows, model.phi) - logq
        log_mean, rel, degenerate = _log_mean(logw)
        est = EstimateWithError(
            log_mean, rel, n_samples, seed=seed,
            note="all sampled weights were zero" if degenerate else "",
        )
    if model.cached_log_z is not None:
        est = EstimateWithError(
            est.value, est.std_error, est.n_samples, seed=est.seed, exact=est.exact,
            normalized=float(np.exp(est.value - model.cached_log_z)), note=est.note,
        )
    return est


def naive_marginal_between(
    model: Dkpp,
    a_in: Subset,
    a_out: Subset,
    proposal: BernoulliProduct,
    n_samples: int = 1000,
    seed: int = 0,
) -> EstimateWithError:
    """Indicator-weighted importance sampling baseline for the interval marginal.

    Samples all N coordinates from the proposal and keeps only draws that
    land inside the interval; most samples are wasted when many
    coordinates are pinned, which is exactly what rb_marginal_between
    avoids.  Kept for variance comparisons.  Same log scale as
    rb_marginal_between.
    """
    base, free = _interval_parts(model, a_in, a_out)
    if proposal.n != model.n:
        raise ValueError("proposal has the wrong length")
    outside = np.array(
        sorted(set(range(model.n)) - set(a_out.items)), dtype=np.intp
    )
    rng = np.random.default_rng(seed)
    xi = proposal.sample(rng, n_samples)
    inside = np.ones(n_samples, dtype=bool)
    if base.size:
        inside &= xi[:, base].all(axis=1)
    if outside.size:
        inside &= ~xi[:, outside].any(axis=1)
    logw = np.full(n_samples, -np.inf)
    if np.any(inside):
        rows = _subset_rows(xi[inside])
        logw[inside] = (
            trace_phi_many(model.kernel, rows, model.phi)
            - proposal.log_mass_rows(xi[inside])
        )
    log_mean, rel, degenerate = _log_mean(logw)
    return EstimateWithError(
        log_mean, rel, n_samples, seed=seed,
        note="no samples landed in the interval" if degenerate else "",
    )


def _uniform_k_subsets(rng, n: int, k: int, count: int) -> np.ndarray:
    """(count, k) uniformly random k-subsets via partial Fisher-Yates shuffles."""
    out = np.empty((count, k), dtype=np.intp)
    base = np.arange(n)
    for s in range(count):
        a = base.copy()
        for j in range(k):
            r = j + int(rng.integers(n - j))
            a[j], a[r] = a[r], a[j]
        out[s] = np.sort(a[:k])
    return out


def rb_marginal_cardinality(
    model: Dkpp,
    k: int,
    n_samples: int = 1000,
    seed: int = 0,
    max_exhaustive: int = 100_000,
) -> EstimateWithError:
    """P(|A| = k), on the probability scale.

    The cardinality marginal equals binomial(N, k) times the mean
    probability of a uniformly random k-subset, so the estimator needs
    only k-subset draws.  All binomial(N, k) subsets are enumerated
    exactly when there are at most max_exhaustive of them.  Requires a
    normalizer: the cached log Z or N within the enumeration cap.
    """
    n = model.n
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, {n}]")
    log_z = _require_log_z(model)
    n_choose_k = math.comb(n, k)
    entries = model.kernel.entries
    if n_choose_k <= max_exhaustive:
        if k == 0:
            total = math.exp(-log_z)
        else:
            combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)
            logv = _trace_phi_indexed(entries, model.phi, combos)
            total = float(np.exp(logsumexp(logv) - log_z))
        return EstimateWithError(total, 0.0, max(n_choose_k, 1), seed=seed, exact=True)
    rng = np.random.default_rng(seed)
    draws = _uniform_k_subsets(rng, n, k, n_samples)
    p = np.exp(_trace_phi_indexed(entries, model.phi, draws) - log_z)
    se = 0.0 if n_samples == 1 else float(n_choose_k * p.std(ddof=1) / math.sqrt(n_samples))
    return EstimateWithError(float(n_choose_k * p.mean()), se, n_samples, seed=seed)


# ---------------------------------------------------------------------------
# Conditional probabilities (normalizer-free)
# ---------------------------------------------------------------------------


def conditional_prob_given_cardinality(
    model: Dkpp,
    a: Subset,
    n_samples: int = 1000,
    seed: int = 0,
    max_exhaustive: int = 100_000,
) -> EstimateWithError:
    """P(A = a | |A| = k) with k = |a|, on the probability scale.

    Both the numerator and the cardinality marginal in the denominator
    carry the same normalizer, so it cancels: the ratio uses unnormalized
    weights only and works at any N.  The denominator is the binomial
    count times the mean unnormalized weight of uniform k-subset draws
    (summed exactly when the count is at most max_exhaustive).
    """
    n = model.n
    _check_subset(a, n)
    k = len(a)
    log_num = unnorm_logprob(model, a)
    n_choose_k = math.comb(n, k)
    entries = model.kernel.entries
    if n_choose_k <= max_exhaustive:
        if k == 0:
            return EstimateWithError(1.0, 0.0, 1, seed=seed, exact=True)
        combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)
        log_den = float(logsumexp(_trace_phi_indexed(entries, model.phi, combos)))
        if np.isneginf(log_den):
            raise RuntimeError("conditional undefined: all k-subsets have probability 0")
        return EstimateWithError(
            float(np.exp(log_num - log_den)), 0.0, n_choose_k, seed=seed, exact=True
        )
    rng = np.random.default_rng(seed)
    draws = _uniform_k_subsets(rng, n, k, n_samples)
    log_mean, rel, degenerate = _log_mean(_trace_phi_indexed(entries, model.phi, draws))
    if degenerate:
        raise RuntimeError("denominator estimate is zero: every sampled k-subset had weight 0")
    value = float(np.exp(log_num - math.log(n_choose_k) - log_mean))
    return EstimateWithError(value, value * rel, n_samples, seed=seed)


def conditional_prob_between(
    model: Dkpp,
    a: Subset,
    a_in: Subset,
    a_out: Subset,
    proposal: BernoulliProduct | None = None,
    n_samples: int = 1000,
    seed: int = 0,
    max_exhaustive_free: int = 20,
) -> EstimateWithError:
    """P(A = a | a_in <= A <= a_out), on the probability scale.

    The normalizer cancels between the numerator and the interval
    marginal, so only unnormalized quantities appear.  The denominator is
    delegated to rb_marginal_between (the proposal is only needed in its
    sampling regime).
    """
    _check_subset(a, model.n)
    if not (set(a_in.items) <= set(a.items) <= set(a_out.items)):
        raise ValueError("need a_in <= a <= a_out")
    den = rb_marginal_between(
        model, a_in, a_out, proposal, n_samples, seed, max_exhaustive_free
    )
    if np.isneginf(den.value):
        raise RuntimeError("denominator estimate is zero")
    value = float(np.exp(unnorm_logprob(model, a) - den.value))
    return EstimateWithError(
        value, value * den.std_error, den.n_samples, seed=seed, exact=den.exact
    )
