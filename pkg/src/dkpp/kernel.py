"""Kernel matrices, spectral functions, and evaluation of tr phi(L[A]).

The central quantity everywhere in this package is the trace of a scalar
function applied through the eigenvalues of a principal submatrix of a
positive semidefinite kernel.  This module owns that computation, the
kernel constructors, and the plain-text kernel file format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "EigensolverError",
    "KernelMatrix",
    "SpectralFunction",
    "Subset",
    "affine_phi",
    "box_cox",
    "gaussian_kernel",
    "load_kernel",
    "log_phi",
    "phi_from_text",
    "phi_to_text",
    "principal_submatrix",
    "quadratic_phi",
    "random_wishart_kernel",
    "save_kernel",
    "square_grid",
    "trace_phi",
    "trace_phi_many",
]

# Relative tolerances for kernel validation and eigenvalue clamping.
SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-10
EIG_CLAMP_RTOL = 1e-12

# Largest batch of submatrix entries processed by one stacked eigvalsh call.
_EIG_CHUNK_ELEMENTS = 1 << 22


class EigensolverError(RuntimeError):
    """Symmetric eigensolver failed to converge."""


# ---------------------------------------------------------------------------
# Spectral functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralFunction:
    """Scalar function on [0, inf) applied to PSD matrices through eigenvalues.

    Variants:
        log         phi(x) = ln x
        affine      phi(x) = b x + c,        coeffs (b, c)
        quadratic   phi(x) = a x^2 + b x + c, coeffs (a, b, c)
        boxcox      phi(x) = (x^lam - 1)/lam, coeffs (lam,); lam = 0 means ln x

    Values at x = 0 are extended reals: log and boxcox with lam <= 0 give
    -inf, all other variants are finite there.
    """

    kind: str
    coeffs: tuple = ()

    def __post_init__(self):
        arity = {"log": 0, "affine": 2, "quadratic": 3, "boxcox": 1}
        if self.kind not in arity:
            raise ValueError(f"unknown spectral function kind {self.kind!r}")
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != arity[self.kind]:
            raise ValueError(
                f"{self.kind} expects {arity[self.kind]} coefficients, got {len(coeffs)}"
            )
        if not all(math.isfinite(c) for c in coeffs):
            raise ValueError("spectral function coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    def values(self, x):
        """Vectorized phi over an array of nonnegative reals (may return -inf)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "affine":
            b, c = self.coeffs
            return b * x + c
        if self.kind == "quadratic":
            a, b, c = self.coeffs
            return (a * x + b) * x + c
        if self.kind == "boxcox":
            (lam,) = self.coeffs
            if abs(lam) >= 1e-4:
                # x = 0 with lam < 0 yields inf**... -> -inf after division.
                with np.errstate(divide="ignore"):
                    return (np.power(x, lam) - 1.0) / lam
            if lam != 0.0:
                # expm1 form avoids cancellation as lam -> 0; x = 0 still
                # lands on the correct extended value through log(0).
                with np.errstate(divide="ignore"):
                    return np.expm1(lam * np.log(x)) / lam
        with np.errstate(divide="ignore"):
            return np.log(x)

    def __call__(self, x: float) -> float:
        """phi at a single nonnegative point."""
        if not math.isfinite(x) or x < 0:
            raise ValueError(f"phi is defined on [0, inf), got {x}")
        return float(self.values(x))

    def derivative(self, x):
        """phi' at x (scalar or array), x >= 0.

        Raises for x = 0 when the derivative is unbounded there (log, and
        boxcox with lam < 1).
        """
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("phi' is defined on [0, inf)")
        if self.kind == "affine":
            b, _ = self.coeffs
            return np.full_like(x, b)
        if self.kind == "quadratic":
            a, b, _ = self.coeffs
            return 2.0 * a * x + b
        if self.kind == "boxcox":
            (lam,) = self.coeffs
            if lam >= 1.0:
                return np.power(x, lam - 1.0)
            if np.any(x == 0):
                raise ValueError(f"phi' unbounded at 0 for boxcox({lam})")
            return np.power(x, lam - 1.0)
        if np.any(x == 0):
            raise ValueError("phi' unbounded at 0 for log")
        return 1.0 / x

    @property
    def is_affine(self) -> bool:
        return self.kind == "affine"


def log_phi() -> SpectralFunction:
    """phi(x) = ln x; the determinantal special case."""
    return SpectralFunction("log")


def affine_phi(b: float, c: float) -> SpectralFunction:
    """phi(x) = b x + c; yields an independent-Bernoulli model."""
    return SpectralFunction("affine", (b, c))


def quadratic_phi(a: float, b: float, c: float) -> SpectralFunction:
    """phi(x) = a x^2 + b x + c; yields a fully visible Boltzmann machine."""
    return SpectralFunction("quadratic", (a, b, c))


def box_cox(lam: float) -> SpectralFunction:
    """Box-Cox family (x^lam - 1)/lam, with lam = 0 meaning ln x.

    Interpolates the dependence regimes: the model is log-submodular
    (repulsive) for lam in [0, 1] and log-supermodular (attractive) for
    lam in [1, 2].  Other lam values are accepted but carry no dependence
    guarantee.
    """
    return SpectralFunction("boxcox", (lam,))


def phi_to_text(phi: SpectralFunction) -> str:
    """Serialize as e.g. 'phi boxcox 0.5' (17 significant digits)."""
    parts = ["phi", phi.kind] + [format(c, ".17g") for c in phi.coeffs]
    return " ".join(parts)


def phi_from_text(text: str) -> SpectralFunction:
    """Parse the output of phi_to_text."""
    tokens = text.split()
    if len(tokens) < 2 or tokens[0] != "phi":
        raise ValueError(f"bad phi descriptor: {text!r}")
    return SpectralFunction(tokens[1], tuple(float(t) for t in tokens[2:]))


# ---------------------------------------------------------------------------
# Subsets of the ground set
# ---------------------------------------------------------------------------


class Subset:
    """Sorted, duplicate-free item indices from the ground set {0..N-1}."""

    __slots__ = ("items",)

    def __init__(self, items=()):
        items = tuple(sorted(int(i) for i in items))
        for s, t in zip(items, items[1:]):
            if s == t:
                raise ValueError(f"duplicate item {s} in subset")
        if items and items[0] < 0:
            raise ValueError(f"negative item index {items[0]}")
        self.items = items

    @classmethod
    def from_mask(cls, mask: int) -> "Subset":
        """Subset from a bitmask with bit i standing for item i."""
        out = cls.__new__(cls)
        out.items = tuple(i for i in range(mask.bit_length()) if mask >> i & 1)
        return out

    @property
    def mask(self) -> int:
        return sum(1 << i for i in self.items)

    @property
    def indices(self) -> np.ndarray:
        return np.array(self.items, dtype=np.intp)

    def union(self, item: int) -> "Subset":
        return self if item in self else Subset(self.items + (item,))

    def minus(self, item: int) -> "Subset":
        return Subset(i for i in self.items if i != item)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, item):
        return item in self.items

    def __eq__(self, other):
        return isinstance(other, Subset) and self.items == other.items

    def __hash__(self):
        return hash(self.items)

    def __repr__(self):
        return f"Subset({list(self.items)})"


def _check_subset(a: Subset, n: int) -> None:
    if a.items and a.items[-1] >= n:
        raise ValueError(f"item {a.items[-1]} out of range for ground set of size {n}")


# ---------------------------------------------------------------------------
# Kernel matrices
# ---------------------------------------------------------------------------


class KernelMatrix:
    """N x N real symmetric positive semidefinite similarity matrix.

    Validation at construction: entries finite, symmetric within a 1e-12
    relative tolerance, and smallest eigenvalue >= -1e-10 * max(largest, 1).
    The stored array is a read-only copy.
    """

    __slots__ = ("entries",)

    def __init__(self, entries):
        arr = np.array(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"kernel must be square, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("kernel must have at least one item")
        if not np.all(np.isfinite(arr)):
            raise ValueError("kernel entries must be finite")
        asym = np.abs(arr - arr.T)
        tol = SYMMETRY_RTOL * np.maximum(1.0, np.abs(arr))
        if np.any(asym > tol):
            i, j = np.unravel_index(np.argmax(asym - tol), arr.shape)
            raise ValueError(f"kernel not symmetric at ({i},{j}): {arr[i, j]} vs {arr[j, i]}")
        w = _eigvalsh_checked(arr[None])[0]
        if w[0] < -PSD_RTOL * max(w[-1], 1.0):
            raise ValueError(f"kernel not positive semidefinite: min eigenvalue {w[0]}")
        arr.setflags(write=False)
        self.entries = arr

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __repr__(self):
        return f"KernelMatrix(dim={self.dim})"


def square_grid(side: int, spacing: float = 1.0) -> np.ndarray:
    """Points of a side x side planar grid, row-major order, shape (side^2, 2)."""
    if side < 1:
        raise ValueError("grid side must be at least 1")
    r, c = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return spacing * np.column_stack([r.ravel(), c.ravel()]).astype(float)


def gaussian_kernel(points, bandwidth: float = 1.0) -> KernelMatrix:
    """Gaussian similarity L_ij = exp(-|x_i - x_j|^2 / (2 bandwidth^2))."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("at least one point is required")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    diff = pts[:, None, :] - pts[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return KernelMatrix(np.exp(-sq / (2.0 * bandwidth**2)))


def random_wishart_kernel(n: int, seed: int) -> KernelMatrix:
    """Normalized Wishart draw L = G G^T / n with G an n x n standard-normal matrix.

    Deterministic per seed; the diagonal has expectation 1.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n))
    l = g @ g.T / n
    return KernelMatrix((l + l.T) / 2.0)


def principal_submatrix(l: KernelMatrix, a: Subset) -> np.ndarray:
    """Rows and columns of L indexed by a; the empty subset gives a 0 x 0 array."""
    _check_subset(a, l.dim)
    idx = a.indices
    return l.entries[np.ix_(idx, idx)]


# ---------------------------------------------------------------------------
# tr phi(L[A])
# ---------------------------------------------------------------------------


def _eigvalsh_checked(stack: np.ndarray) -> np.ndarray:
    """Stacked symmetric eigenvalues, ascending, with convergence surfaced."""
    try:
        return np.linalg.eigvalsh(stack)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"symmetric eigensolver failed: {exc}") from exc


def _clamp_small(w: np.ndarray) -> np.ndarray:
    """Zero out eigenvalues below EIG_CLAMP_RTOL * max(w_max, 1), rowwise.

    Makes singular submatrices yield exact zeros (hence -inf under log)
    instead of large negative noise, and absorbs the slightly negative
    eigenvalues PSD matrices produce in floating point.
    """
    thresh = EIG_CLAMP_RTOL * np.maximum(w[..., -1], 1.0)
    return np.where(w < thresh[..., None], 0.0, w)


def _trace_phi_indexed(entries: np.ndarray, phi: SpectralFunction, idx: np.ndarray) -> np.ndarray:
    """tr phi over a batch of same-size subsets.

    idx has shape (B, k); returns shape (B,).  Chunked so the gathered
    submatrix stack stays within a fixed memory budget.
    """
    b, k = idx.shape
    if k == 0:
        return np.zeros(b)
    out = np.empty(b)
    step = max(1, _EIG_CHUNK_ELEMENTS // (k * k))
    for lo in range(0, b, step):
        sub = idx[lo : lo + step]
        mats = entries[sub[:, :, None], sub[:, None, :]]
        w = _clamp_small(_eigvalsh_checked(mats))
        out[lo : lo + step] = phi.values(w).sum(axis=1)
    return out


def trace_phi(l: KernelMatrix, a: Subset, phi: SpectralFunction) -> float:
    """tr phi(L[a]) via symmetric eigendecomposition; the log of the
    unnormalized subset weight.

    The empty subset gives exactly 0.  Returns -inf when a clamped
    eigenvalue is 0 and phi(0) = -inf (singular submatrix under log).
    """
    _check_subset(a, l.dim)
    if len(a) == 0:
        return 0.0
    return float(_trace_phi_indexed(l.entries, phi, a.indices[None, :])[0])


def trace_phi_many(l: KernelMatrix, subsets, phi: SpectralFunction) -> np.ndarray:
    """tr phi(L[a]) for a sequence of subsets (Subset or index arrays).

    Groups the subsets by size so each group is one stacked eigvalsh call;
    this is the fast path for Monte Carlo estimators.
    """
    entries = l.entries
    idx_list = [a.indices if isinstance(a, Subset) else np.asarray(a, dtype=np.intp) for a in subsets]
    out = np.zeros(len(idx_list))
    by_size: dict[int, list[int]] = {}
    for pos, idx in enumerate(idx_list):
        if idx.size:
            by_size.setdefault(idx.size, []).append(pos)
    for k, positions in by_size.items():
        stack = np.vstack([idx_list[p] for p in positions])
        out[positions] = _trace_phi_indexed(entries, phi, stack)
    return out


# ---------------------------------------------------------------------------
# Kernel file format
# ---------------------------------------------------------------------------


def save_kernel(l: KernelMatrix, path) -> None:
    """Write a kernel as text: first line N, then N rows of N reals.

    Values are written with 17 significant digits so a round trip is exact.
    """
    lines = [str(l.dim)]
    for row in l.entries:
        lines.append(" ".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_kernel(path) -> KernelMatrix:
    """Read a kernel written by save_kernel."""
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [line for line in raw if line.strip()]
    if not rows:
        raise ValueError(f"empty kernel file {path}")
    try:
        n = int(rows[0])
    except ValueError as exc:
        raise ValueError(f"first line of {path} must be the dimension") from exc
    if len(rows) != n + 1:
        raise ValueError(f"expected {n} matrix rows in {path}, found {len(rows) - 1}")
    mat = np.array([[float(v) for v in row.split()] for row in rows[1:]])
    if mat.shape != (n, n):
        raise ValueError(f"malformed kernel rows in {path}")
    return KernelMatrix(mat)
