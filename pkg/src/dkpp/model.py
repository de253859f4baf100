"""The subset distribution P(A) = exp(tr phi(L[A])) / Z and its exact small-N oracles.

Exact quantities here enumerate all 2^N subsets, so they carry a hard cap
on N; everything above desk scale goes through the estimators in
:mod:`dkpp.inference` instead.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

from .kernel import (
    KernelMatrix,
    SpectralFunction,
    Subset,
    _trace_phi_indexed,
    load_kernel,
    phi_from_text,
    phi_to_text,
    save_kernel,
    trace_phi,
)

__all__ = [
    "BernoulliProduct",
    "BoltzmannParams",
    "Dkpp",
    "ENUMERATION_CAP",
    "check_log_submodular",
    "check_log_supermodular",
    "exact_log_partition",
    "exact_prob",
    "exact_probs",
    "exact_sample",
    "load_model",
    "save_model",
    "subset_log_weights",
    "to_bernoulli",
    "to_boltzmann",
    "unnorm_logprob",
]

ENUMERATION_CAP = 24
MODULARITY_CAP = 12
MODULARITY_TOL = 1e-9


class Dkpp:
    """A kernel plus a spectral function.

    The normalizer cache is write-once: it is set explicitly by the caller
    (from exact enumeration or an estimate), never recomputed silently.
    """

    __slots__ = ("kernel", "phi", "_cached_log_z")

    def __init__(self, kernel: KernelMatrix, phi: SpectralFunction):
        self.kernel = kernel
        self.phi = phi
        self._cached_log_z = None

    @property
    def n(self) -> int:
        return self.kernel.dim

    @property
    def cached_log_z(self):
        return self._cached_log_z

    def cache_log_z(self, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError("cached log Z must be finite")
        if self._cached_log_z is not None and self._cached_log_z != value:
            raise ValueError("log Z cache is write-once; already set")
        self._cached_log_z = value

    def __repr__(self):
        return f"Dkpp(n={self.n}, phi={self.phi.kind}{self.phi.coeffs})"


def unnorm_logprob(model: Dkpp, a: Subset) -> float:
    """log of the unnormalized weight, tr phi(L[a]); -inf means probability 0."""
    return trace_phi(model.kernel, a, model.phi)


def subset_log_weights(model: Dkpp, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Unnormalized log weights of all 2^N subsets, indexed by bitmask.

    Bit i of the index stands for item i, so position 0 is the empty set
    and position 2^N - 1 the full ground set.
    """
    n = model.n
    if n > cap:
        raise ValueError(f"enumeration over 2^{n} subsets exceeds cap {cap}")
    entries = model.kernel.entries
    out = np.empty(1 << n)
    out[0] = 0.0
    for k in range(1, n + 1):
        combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)
        masks = (1 << combos).sum(axis=1)
        out[masks] = _trace_phi_indexed(entries, model.phi, combos)
    return out


def exact_log_partition(model: Dkpp, cap: int = ENUMERATION_CAP) -> float:
    """log Z by full enumeration; nonnegative since the empty set contributes 1."""
    return float(logsumexp(subset_log_weights(model, cap)))


def _require_log_z(model: Dkpp, cap: int = ENUMERATION_CAP) -> float:
    if model.cached_log_z is not None:
        return model.cached_log_z
    if model.n <= cap:
        return exact_log_partition(model, cap)
    raise ValueError(
        f"no normalizer available for N={model.n}: cache one via Dkpp.cache_log_z "
        "(exact or estimated) or stay within the enumeration cap"
    )


def exact_prob(model: Dkpp, a: Subset, cap: int = ENUMERATION_CAP) -> float:
    """Normalized subset probability, using the cached or enumerated log Z."""
    return float(np.exp(unnorm_logprob(model, a) - _require_log_z(model, cap)))


def exact_probs(model: Dkpp, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All 2^N normalized probabilities, indexed by bitmask."""
    logw = subset_log_weights(model, cap)
    return np.exp(logw - logsumexp(logw))


def exact_sample(model: Dkpp, n_samples: int, seed: int, cap: int = ENUMERATION_CAP):
    """Draw subsets exactly by inverse CDF over the enumerated distribution."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    cum = np.cumsum(exact_probs(model, cap))
    cum[-1] = 1.0
    rng = np.random.default_rng(seed)
    masks = np.searchsorted(cum, rng.random(n_samples), side="right")
    return [Subset.from_mask(int(m)) for m in masks]


# ---------------------------------------------------------------------------
# Closed-form special cases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoltzmannParams:
    """Fully visible Boltzmann machine: biases h and symmetric zero-diagonal W."""

    h: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        if np.any(np.diag(self.w) != 0):
            raise ValueError("W must have zero diagonal")
        if not np.array_equal(self.w, self.w.T):
            raise ValueError("W must be symmetric")

    def log_weight(self, a: Subset) -> float:
        """h^T z + z^T W z for the indicator vector z of a."""
        idx = a.indices
        return float(self.h[idx].sum() + self.w[np.ix_(idx, idx)].sum())


@dataclass(frozen=True, eq=False)
class BernoulliProduct:
    """Independent inclusion probabilities q in [0,1]^N.

    Serves as the variational family, the importance sampling proposal, and
    the exact form of any affine-phi model.  Endpoint values 0 and 1 are
    handled exactly.
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1:
            raise ValueError("q must be a vector")
        if np.any(q < 0) or np.any(q > 1) or not np.all(np.isfinite(q)):
            raise ValueError("q entries must lie in [0, 1]")
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def sample(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        """(n_samples, N) boolean inclusion matrix."""
        return rng.random((n_samples, self.n)) < self.q

    def log_mass_rows(self, xi: np.ndarray) -> np.ndarray:
        """log Q of each row of a boolean inclusion matrix (may be -inf)."""
        with np.errstate(divide="ignore"):
            lq = np.log(self.q)
            l1mq = np.log1p(-self.q)
        return np.where(xi, lq, l1mq).sum(axis=-1)

    def log_mass_subset(self, a: Subset) -> float:
        xi = np.zeros(self.n, dtype=bool)
        xi[a.indices] = True
        return float(self.log_mass_rows(xi[None, :])[0])

    def mass_vector(self) -> np.ndarray:
        """All 2^N subset masses, indexed by bitmask (bit i = item i)."""
        w = np.ones(1)
        for qi in self.q:
            w = np.concatenate([w * (1.0 - qi), w * qi])
        return w

    def entropy(self) -> float:
        """Sum of per-item Bernoulli entropies, with 0 log 0 = 0."""
        q = self.q
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = -q * np.log(q) - (1.0 - q) * np.log1p(-q)
        return float(np.where((q == 0) | (q == 1), 0.0, terms).sum())


def to_boltzmann(model: Dkpp) -> BoltzmannParams:
    """Boltzmann parameters of a quadratic-phi model.

    For phi(x) = a x^2 + b x + c the subset weight is the Boltzmann energy
    with W_ij = a L_ij^2 off the diagonal and h_i = a L_ii^2 + b L_ii + c.
    Note W inherits the sign of a everywhere: this family covers only
    all-nonnegative or all-nonpositive couplings.
    """
    if model.phi.kind != "quadratic":
        raise ValueError(f"Boltzmann form requires quadratic phi, got {model.phi.kind}")
    a, b, c = model.phi.coeffs
    l = model.kernel.entries
    w = a * l**2
    np.fill_diagonal(w, 0.0)
    d = np.diag(l)
    h = a * d**2 + b * d + c
    return BoltzmannParams(h=h, w=w)


def to_bernoulli(model: Dkpp) -> BernoulliProduct:
    """Exact product-Bernoulli form of an affine-phi model: q_i = sigmoid(b L_ii + c)."""
    if not model.phi.is_affine:
        raise ValueError(f"Bernoulli form requires affine phi, got {model.phi.kind}")
    b, c = model.phi.coeffs
    return BernoulliProduct(expit(b * np.diag(model.kernel.entries) + c))


# ---------------------------------------------------------------------------
# Dependence checks (exhaustive, small N)
# ---------------------------------------------------------------------------


def _modularity_scan(model: Dkpp, sign: int, tol: float, cap: int):
    """Worst violation of f(S)+f(T) >= f(S|T)+f(S&T) (sign=+1) or <= (sign=-1)."""
    n = model.n
    if n > cap:
        raise ValueError(f"exhaustive pair scan infeasible for N={n} (cap {cap})")
    f = subset_log_weights(model)
    t = np.arange(1 << n)
    worst = -np.inf
    for s in range(1 << n):
        lhs = f[s] + f
        rhs = f[s | t] + f[s & t]
        if sign > 0:
            # Submodular: violation when rhs exceeds lhs; -inf rhs never violates.
            with np.errstate(invalid="ignore"):
                viol = np.where(np.isneginf(rhs), -np.inf, rhs - lhs)
        else:
            with np.errstate(invalid="ignore"):
                viol = np.where(np.isneginf(lhs), -np.inf, lhs - rhs)
        worst = max(worst, float(viol.max()))
    return worst <= tol, max(0.0, worst)


def check_log_submodular(model: Dkpp, tol: float = MODULARITY_TOL, cap: int = MODULARITY_CAP):
    """Exhaustively test log-submodularity over all subset pairs.

    Returns (holds, worst_violation).  Log-submodularity is the negative
    dependence proxy: weights of unions are dominated by products of the
    parts.  Guaranteed for boxcox lam in [0, 1] on PSD kernels.
    """
    return _modularity_scan(model, +1, tol, cap)


def check_log_supermodular(model: Dkpp, tol: float = MODULARITY_TOL, cap: int = MODULARITY_CAP):
    """Exhaustive companion of check_log_submodular with the inequality flipped.

    Guaranteed for boxcox lam in [1, 2] on PSD kernels.  Affine phi passes
    both checks (log-modular).
    """
    return _modularity_scan(model, -1, tol, cap)


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------


def save_model(model: Dkpp, path, kernel_filename: str | None = None) -> None:
    """Write a model header (phi descriptor + kernel file reference).

    The kernel is saved next to the header file; the header references it
    by relative path.
    """
    path = Path(path)
    if kernel_filename is None:
        kernel_filename = path.stem + ".kernel.txt"
    save_kernel(model.kernel, path.parent / kernel_filename)
    path.write_text(f"{phi_to_text(model.phi)}\nkernel {kernel_filename}\n", encoding="utf-8")


def load_model(path) -> Dkpp:
    """Read a model header written by save_model."""
    path = Path(path)
    phi = None
    kernel = None
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("phi "):
            phi = phi_from_text(line)
        elif line.startswith("kernel "):
            kernel = load_kernel(path.parent / line.split(None, 1)[1])
        else:
            raise ValueError(f"unrecognized model header line: {line!r}")
    if phi is None or kernel is None:
        raise ValueError(f"model file {path} must contain 'phi' and 'kernel' lines")
    return Dkpp(kernel, phi)
