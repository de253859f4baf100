"""Tests for kernels, spectral functions, and tr phi evaluation."""

import math

import numpy as np
import pytest

from dkpp.kernel import (
    KernelMatrix,
    Subset,
    affine_phi,
    box_cox,
    gaussian_kernel,
    load_kernel,
    log_phi,
    phi_from_text,
    phi_to_text,
    principal_submatrix,
    quadratic_phi,
    random_wishart_kernel,
    save_kernel,
    square_grid,
    trace_phi,
    trace_phi_many,
)

from oracles import lu_det, random_psd


class TestSpectralFunction:
    def test_box_cox_two_at_three(self):
        assert box_cox(2.0)(3.0) == pytest.approx(4.0, abs=1e-14)

    def test_box_cox_zero_is_log(self):
        for x in (0.5, 1.0, 2.0, 7.3):
            assert box_cox(0.0)(x) == math.log(x)

    def test_box_cox_continuity_in_lambda(self):
        """Tiny lambda agrees with log: the family is continuous at 0."""
        assert box_cox(1e-9)(2.0) == pytest.approx(math.log(2.0), abs=1e-8)

    def test_affine_zero_is_zero(self):
        phi = affine_phi(0.0, 0.0)
        for x in (0.0, 0.5, 42.0):
            assert phi(x) == 0.0

    def test_values_at_zero(self):
        assert log_phi()(0.0) == -math.inf
        assert box_cox(0.0)(0.0) == -math.inf
        assert box_cox(-0.5)(0.0) == -math.inf
        assert box_cox(0.5)(0.0) == -2.0
        assert quadratic_phi(1, 2, 3)(0.0) == 3.0

    def test_negative_input_rejected(self):
        with pytest.raises(ValueError):
            log_phi()(-1.0)

    def test_derivative_log(self):
        assert log_phi().derivative(2.0) == pytest.approx(0.5, rel=1e-15)

    def test_derivative_box_cox(self):
        assert box_cox(2.0).derivative(3.0) == pytest.approx(3.0, rel=1e-15)

    def test_derivative_matches_central_difference(self):
        """phi' agrees with (phi(x+h)-phi(x-h))/2h at 1e-6 relative."""
        h = 1e-6
        variants = [log_phi(), affine_phi(1.5, -2.0), quadratic_phi(0.7, -1.1, 3.0),
                    box_cox(0.0), box_cox(0.5), box_cox(1.0), box_cox(1.5), box_cox(2.0)]
        for phi in variants:
            for x in (0.3, 1.0, 2.7, 9.0):
                numeric = (phi(x + h) - phi(x - h)) / (2 * h)
                analytic = float(phi.derivative(x))
                assert analytic == pytest.approx(numeric, rel=1e-6, abs=1e-9), (phi, x)

    def test_derivative_unbounded_at_zero(self):
        for phi in (log_phi(), box_cox(0.5), box_cox(0.0)):
            with pytest.raises(ValueError):
                phi.derivative(0.0)
        # Finite there for the rest.
        assert box_cox(1.0).derivative(0.0) == 1.0
        assert box_cox(1.5).derivative(0.0) == 0.0
        assert affine_phi(2.0, 1.0).derivative(0.0) == 2.0

    def test_descriptor_round_trip(self):
        for phi in (log_phi(), affine_phi(1, -1), quadratic_phi(1, 0, 0), box_cox(0.5)):
            assert phi_from_text(phi_to_text(phi)) == phi

    def test_bad_descriptor(self):
        with pytest.raises(ValueError):
            phi_from_text("phi cubic 1 2 3 4")


class TestKernelMatrix:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            KernelMatrix([[1.0, 0.5], [0.3, 1.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError, match="semidefinite"):
            KernelMatrix([[1.0, 2.0], [2.0, 1.0]])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            KernelMatrix([[np.inf, 0.0], [0.0, 1.0]])

    def test_entries_read_only(self):
        k = KernelMatrix(np.eye(3))
        with pytest.raises(ValueError):
            k.entries[0, 0] = 2.0


class TestGaussianKernel:
    def test_identical_points(self):
        k = gaussian_kernel([[0.0, 0.0], [0.0, 0.0]], 1.0)
        np.testing.assert_array_equal(k.entries, np.ones((2, 2)))

    def test_single_point(self):
        k = gaussian_kernel([[3.0, 4.0]], 2.0)
        np.testing.assert_array_equal(k.entries, [[1.0]])

    def test_distance_sqrt_two(self):
        k = gaussian_kernel([[0.0, 0.0], [0.0, math.sqrt(2.0)]], 1.0)
        assert k.entries[0, 1] == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_empty_points_rejected(self):
        with pytest.raises(ValueError):
            gaussian_kernel([], 1.0)

    def test_nonfinite_points_rejected(self):
        with pytest.raises(ValueError):
            gaussian_kernel([[np.nan, 0.0]], 1.0)

    def test_grid_shape(self):
        pts = square_grid(3)
        assert pts.shape == (9, 2)
        np.testing.assert_array_equal(pts[4], [1.0, 1.0])


class TestWishartKernel:
    def test_one_by_one_is_squared_normal(self):
        k = random_wishart_kernel(1, seed=11)
        g = np.random.default_rng(11).standard_normal((1, 1))
        assert k.entries[0, 0] == pytest.approx(float(g[0, 0] ** 2), rel=1e-15)

    def test_deterministic_per_seed(self):
        a = random_wishart_kernel(5, seed=7)
        b = random_wishart_kernel(5, seed=7)
        np.testing.assert_array_equal(a.entries, b.entries)

    def test_diagonal_mean_near_one(self):
        """Diagonal entries average a chi-square mean of 1."""
        k = random_wishart_kernel(16, seed=0)
        assert abs(np.diag(k.entries).mean() - 1.0) < 0.5
        # And the expectation itself, simulated over many seeds, sits at 1.
        means = [np.diag(random_wishart_kernel(16, seed=s).entries).mean() for s in range(40)]
        assert abs(np.mean(means) - 1.0) < 0.1


class TestPrincipalSubmatrix:
    def test_corners(self):
        k = KernelMatrix(random_psd(3, seed=1))
        sub = principal_submatrix(k, Subset([0, 2]))
        expected = k.entries[np.ix_([0, 2], [0, 2])]
        np.testing.assert_array_equal(sub, expected)

    def test_empty(self):
        k = KernelMatrix(np.eye(3))
        assert principal_submatrix(k, Subset()).shape == (0, 0)

    def test_full(self):
        k = KernelMatrix(random_psd(4, seed=2))
        np.testing.assert_array_equal(principal_submatrix(k, Subset(range(4))), k.entries)

    def test_out_of_range(self):
        k = KernelMatrix(np.eye(3))
        with pytest.raises(ValueError):
            principal_submatrix(k, Subset([0, 3]))


class TestSubset:
    def test_sorts_and_rejects_duplicates(self):
        assert Subset([3, 1, 2]).items == (1, 2, 3)
        with pytest.raises(ValueError):
            Subset([0, 0])

    def test_mask_round_trip(self):
        a = Subset([0, 2, 5])
        assert Subset.from_mask(a.mask) == a

    def test_union_minus(self):
        a = Subset([1, 3])
        assert a.union(2) == Subset([1, 2, 3])
        assert a.minus(3) == Subset([1])
        assert a.union(1) == a


class TestTracePhi:
    def test_identity_log_is_zero(self):
        k = KernelMatrix(np.eye(2))
        assert trace_phi(k, Subset([0, 1]), log_phi()) == 0.0

    def test_diagonal_box_cox_one(self):
        k = KernelMatrix(np.diag([2.0, 3.0]))
        assert trace_phi(k, Subset([0, 1]), box_cox(1.0)) == pytest.approx(3.0, abs=1e-12)

    def test_singular_log_is_minus_inf(self):
        k = KernelMatrix([[1.0, 1.0], [1.0, 1.0]])
        assert trace_phi(k, Subset([0, 1]), log_phi()) == -math.inf

    def test_empty_subset_is_zero_for_every_phi(self):
        k = KernelMatrix(random_psd(4, seed=3))
        for phi in (log_phi(), affine_phi(2, 1), quadratic_phi(1, 0, 0), box_cox(0.7)):
            assert trace_phi(k, Subset(), phi) == 0.0

    def test_log_matches_independent_determinant(self):
        """tr log equals log det, with the determinant from hand-rolled LU."""
        k = KernelMatrix(random_psd(6, seed=4, jitter=0.2))
        for items in ([0], [1, 4], [0, 2, 3], [0, 1, 2, 3, 4, 5]):
            sub = k.entries[np.ix_(items, items)]
            expected = math.log(lu_det(sub))
            got = trace_phi(k, Subset(items), log_phi())
            assert got == pytest.approx(expected, abs=1e-8)

    def test_affine_trace_identity(self):
        """tr phi with affine phi is exactly b * tr L[a] + c * |a|."""
        b, c = 1.7, -0.4
        k = KernelMatrix(random_psd(6, seed=5))
        phi = affine_phi(b, c)
        for items in ([2], [0, 3], [1, 2, 4, 5], list(range(6))):
            expected = sum(b * k.entries[i, i] + c for i in items)
            assert trace_phi(k, Subset(items), phi) == pytest.approx(expected, abs=1e-10)

    def test_quadratic_trace_identity(self):
        """tr phi with quadratic phi is a*|L[a]|_F^2 + b*tr L[a] + c*|a|, entrywise."""
        a, b, c = 0.8, -1.2, 0.3
        k = KernelMatrix(random_psd(6, seed=6))
        phi = quadratic_phi(a, b, c)
        for items in ([1], [0, 2], [1, 3, 5], list(range(6))):
            sub = k.entries[np.ix_(items, items)]
            expected = a * float((sub**2).sum()) + b * float(np.trace(sub)) + c * len(items)
            assert trace_phi(k, Subset(items), phi) == pytest.approx(expected, abs=1e-9)

    def test_permutation_equivariance(self):
        """Relabeling items and subsets together leaves every trace unchanged."""
        n = 6
        k = KernelMatrix(random_psd(n, seed=7))
        rng = np.random.default_rng(8)
        perm = rng.permutation(n)
        permuted = KernelMatrix(k.entries[np.ix_(perm, perm)])
        phi = box_cox(0.5)
        for mask in range(1 << n):
            items = [i for i in range(n) if mask >> i & 1]
            mapped = [int(np.flatnonzero(perm == i)[0]) for i in items]
            np.testing.assert_allclose(
                trace_phi(k, Subset(items), phi),
                trace_phi(permuted, Subset(mapped), phi),
                rtol=1e-9, atol=1e-12,
            )

    def test_lambda_continuity_on_grid(self):
        """lam -> tr phi_lam is finite and has no jump 10x beyond its neighbors."""
        k = KernelMatrix(random_psd(6, seed=9, jitter=0.1))
        a = Subset([0, 2, 3, 5])
        lams = np.arange(0.0, 2.0001, 0.01)
        vals = np.array([trace_phi(k, a, box_cox(l)) for l in lams])
        assert np.all(np.isfinite(vals))
        diffs = np.abs(np.diff(vals))
        for j in range(1, len(diffs) - 1):
            local = max(diffs[j - 1], diffs[j + 1])
            assert diffs[j] <= 10.0 * local + 1e-12

    def test_many_matches_singles(self):
        k = KernelMatrix(random_psd(7, seed=10))
        phi = box_cox(1.5)
        subsets = [Subset(), Subset([3]), Subset([0, 6]), Subset([1, 2, 4]), Subset([0, 1, 2, 3, 4, 5, 6])]
        batch = trace_phi_many(k, subsets, phi)
        singles = [trace_phi(k, s, phi) for s in subsets]
        np.testing.assert_allclose(batch, singles, rtol=0, atol=0)


class TestKernelFile:
    def test_round_trip_is_exact(self, tmp_path):
        k = KernelMatrix(random_psd(5, seed=12))
        path = tmp_path / "k.txt"
        save_kernel(k, path)
        loaded = load_kernel(path)
        np.testing.assert_array_equal(loaded.entries, k.entries)

    def test_rejects_wrong_row_count(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3\n1 0 0\n0 1 0\n")
        with pytest.raises(ValueError, match="rows"):
            load_kernel(path)

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("x\n1\n")
        with pytest.raises(ValueError, match="dimension"):
            load_kernel(path)
