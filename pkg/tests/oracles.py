"""Independent brute-force oracles used to verify the library.

Everything here deliberately avoids the library's computation paths:
determinants come from hand-rolled LU elimination, enumerations from plain
Python loops over bitmasks, and expectations from direct summation.  Slow
and simple on purpose.
"""

import math

import numpy as np


def random_psd(n, seed, jitter=0.0):
    """Well-conditioned random PSD test matrix (normalized Gram + optional ridge)."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n))
    l = g @ g.T / n + jitter * np.eye(n)
    return (l + l.T) / 2.0


def lu_det(a):
    """Determinant by partial-pivot Gaussian elimination, no linear algebra library."""
    a = [list(map(float, row)) for row in np.asarray(a)]
    n = len(a)
    det = 1.0
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[pivot][col] == 0.0:
            return 0.0
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]
            det = -det
        det *= a[col][col]
        for r in range(col + 1, n):
            factor = a[r][col] / a[col][col]
            for c in range(col, n):
                a[r][c] -= factor * a[col][c]
    return det


def mask_items(mask, n):
    return [i for i in range(n) if mask >> i & 1]


def enum_log_weights(entries, phi_values):
    """All 2^n unnormalized log weights by per-subset eigendecomposition.

    phi_values is a vectorized scalar function over eigenvalue arrays.  No
    eigenvalue clamping: singular subsets give large negative values, not
    -inf, so comparisons should stick to nonsingular models.
    """
    entries = np.asarray(entries)
    n = entries.shape[0]
    out = np.empty(1 << n)
    for mask in range(1 << n):
        items = mask_items(mask, n)
        if not items:
            out[mask] = 0.0
            continue
        sub = entries[np.ix_(items, items)]
        w = np.linalg.eigvalsh(sub)
        out[mask] = float(np.sum(phi_values(np.maximum(w, 0.0))))
    return out


def log_sum_exp(values):
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(v - m) for v in values))


def enum_probs(entries, phi_values):
    """Normalized probabilities of all 2^n subsets, by direct summation."""
    logw = enum_log_weights(entries, phi_values)
    log_z = log_sum_exp(list(logw))
    return np.array([math.exp(v - log_z) for v in logw])


def bernoulli_masses(q):
    """All 2^n product-Bernoulli masses by plain per-subset products."""
    q = np.asarray(q, dtype=float)
    n = q.size
    out = np.empty(1 << n)
    for mask in range(1 << n):
        p = 1.0
        for i in range(n):
            p *= q[i] if mask >> i & 1 else 1.0 - q[i]
        out[mask] = p
    return out


def inclusion_marginals(probs, n):
    """P(i in A) for each item, from a full probability vector."""
    return np.array(
        [sum(probs[mask] for mask in range(1 << n) if mask >> i & 1) for i in range(n)]
    )


def cardinality_marginal(probs, n, k):
    return sum(probs[mask] for mask in range(1 << n) if bin(mask).count("1") == k)


def interval_marginal(probs, n, a_in, a_out):
    """P(a_in <= A <= a_out) by direct summation over all subsets."""
    in_mask = sum(1 << i for i in a_in)
    out_mask = sum(1 << i for i in a_out)
    total = 0.0
    for mask in range(1 << n):
        if mask & in_mask == in_mask and mask | out_mask == out_mask:
            total += probs[mask]
    return total


def kl_product_vs_exact(q, probs):
    """KL(Q_q || P) summed over all subsets, with lim-0 conventions."""
    masses = bernoulli_masses(q)
    total = 0.0
    for qm, pm in zip(masses, probs):
        if qm == 0.0:
            continue
        total += qm * (math.log(qm) - math.log(pm))
    return total


def heat_bath_sweep_matrix(log_weights, n):
    """Row-stochastic transition matrix of one systematic heat-bath sweep.

    Built directly from inclusion probabilities sigmoid(logw difference);
    the single-site kernels are composed in site order 0..n-1.  Any sweep
    order leaves the target invariant, so one fixed order suffices for
    stationarity checks.
    """
    size = 1 << n
    total = np.eye(size)
    for i in range(n):
        bit = 1 << i
        t = np.zeros((size, size))
        for mask in range(size):
            with_i, without_i = mask | bit, mask & ~bit
            gap = log_weights[with_i] - log_weights[without_i]
            if gap > 500:
                p = 1.0
            elif gap < -500:
                p = 0.0
            else:
                p = 1.0 / (1.0 + math.exp(-gap))
            t[mask, with_i] = p
            t[mask, without_i] = 1.0 - p
        total = total @ t
    return total
