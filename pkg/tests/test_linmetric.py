"""Linear algebra, special functions, and Gaussian metric tests."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from caviw import linmetric as lm
from caviw.linmetric import GaussianMeasure, SpdMatrix

from conftest import (
    fisher_info_quadrature_1d,
    power_iteration_lambda_max,
    random_correlation,
    random_spd,
)


class TestSymEigen:
    def test_identity(self):
        eig = lm.sym_eigen(np.eye(3))
        np.testing.assert_allclose(eig.eigenvalues, np.ones(3))

    def test_diagonal_sorted_descending(self):
        eig = lm.sym_eigen(np.diag([1.0, 2.0, 5.0]))
        np.testing.assert_allclose(eig.eigenvalues, [5.0, 2.0, 1.0])

    def test_2x2_closed_form(self):
        eig = lm.sym_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(eig.eigenvalues, [3.0, 1.0], atol=1e-14)

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(7)
        for dim in (2, 5, 12):
            s = random_spd(rng, dim)
            eig = lm.sym_eigen(s.mat)
            scale = np.max(np.abs(s.mat))
            assert np.max(np.abs(eig.reconstruct() - s.mat)) <= 1e-10 * scale
            vtv = eig.eigenvectors.T @ eig.eigenvectors
            assert np.max(np.abs(vtv - np.eye(dim))) <= 1e-10

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        s = random_spd(rng, 6)
        a = lm.sym_eigen(s.mat)
        b = lm.sym_eigen(s.mat.copy())
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert np.array_equal(a.eigenvectors, b.eigenvectors)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError):
            lm.sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestLambdaMax:
    def test_identity(self):
        assert lm.lambda_max(np.eye(4)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert lm.lambda_max(np.diag([0.1, 0.9])) == pytest.approx(0.9)

    def test_matches_power_iteration_oracle(self):
        rng = np.random.default_rng(3)
        s = random_spd(rng, 5)
        ours = lm.lambda_max(s.mat)
        oracle = power_iteration_lambda_max(s.mat)
        assert abs(ours - oracle) <= 1e-8 * max(1.0, abs(oracle))


class TestSpdSqrt:
    def test_identity(self):
        r = lm.spd_sqrt(SpdMatrix.identity(2))
        np.testing.assert_allclose(r.mat, np.eye(2))

    def test_diagonal(self):
        r = lm.spd_sqrt(SpdMatrix.diagonal([4.0, 9.0]))
        np.testing.assert_allclose(r.mat, np.diag([2.0, 3.0]), atol=1e-14)

    def test_multiply_back(self):
        rng = np.random.default_rng(5)
        for dim in (3, 8):
            s = random_spd(rng, dim)
            r = lm.spd_sqrt(s)
            scale = np.max(np.abs(s.mat))
            assert np.max(np.abs(r.mat @ r.mat - s.mat)) <= lm.RECONSTRUCTION_RTOL * scale

    def test_rejects_non_pd(self):
        with pytest.raises(ValueError):
            SpdMatrix(np.diag([1.0, -1.0]))


class TestCholeskySolve:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(lm.cholesky_solve(SpdMatrix.identity(3), b), b)

    def test_diagonal(self):
        x = lm.cholesky_solve(SpdMatrix.diagonal([2.0, 4.0]), np.array([2.0, 4.0]))
        np.testing.assert_allclose(x, [1.0, 1.0])

    def test_residual_below_tolerance(self):
        rng = np.random.default_rng(13)
        s = random_spd(rng, 10)
        b = rng.standard_normal(10)
        x = lm.cholesky_solve(s, b)
        assert np.linalg.norm(s.mat @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lm.cholesky_solve(SpdMatrix.identity(3), np.ones(4))


def _random_gaussian(rng, dim):
    return GaussianMeasure(rng.standard_normal(dim), random_spd(rng, dim))


class TestGaussianW2:
    def test_identical_measures(self):
        rng = np.random.default_rng(2)
        g = _random_gaussian(rng, 3)
        assert lm.gaussian_w2(g, g, SpdMatrix.identity(3)) == 0.0

    def test_shared_precision_reduces_to_weighted_mean_distance(self):
        rng = np.random.default_rng(4)
        q = random_spd(rng, 4)
        m1, m2 = rng.standard_normal(4), rng.standard_normal(4)
        g1, g2 = GaussianMeasure(m1, q), GaussianMeasure(m2, q)
        expected = np.linalg.norm(q.sqrt().mat @ (m1 - m2))
        assert lm.gaussian_w2(g1, g2, q) == pytest.approx(expected, rel=1e-12)

    def test_1d_bures_equal_means(self):
        g1 = GaussianMeasure([0.0], SpdMatrix([[1.0]]))
        g2 = GaussianMeasure([0.0], SpdMatrix([[0.25]]))  # variance 4
        assert lm.gaussian_w2(g1, g2, SpdMatrix.identity(1)) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry_and_zero_iff_equal(self):
        rng = np.random.default_rng(6)
        m = random_spd(rng, 3)
        g1, g2 = _random_gaussian(rng, 3), _random_gaussian(rng, 3)
        d12 = lm.gaussian_w2(g1, g2, m)
        d21 = lm.gaussian_w2(g2, g1, m)
        assert d12 == pytest.approx(d21, rel=1e-12)
        assert d12 > 0.0

    def test_triangle_inequality_randomized(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            dim = int(rng.integers(1, 4))
            m = random_spd(rng, dim)
            a, b, c = (_random_gaussian(rng, dim) for _ in range(3))
            dab = lm.gaussian_w2(a, b, m)
            dbc = lm.gaussian_w2(b, c, m)
            dac = lm.gaussian_w2(a, c, m)
            assert dac <= dab + dbc + 1e-9

    def test_cross_term_against_nonsymmetric_eig_oracle(self):
        # tr((S1^{1/2} S2 S1^{1/2})^{1/2}) == sum sqrt(eig(S1 S2))
        rng = np.random.default_rng(9)
        s1 = random_spd(rng, 4)
        s2 = random_spd(rng, 4)
        g1 = GaussianMeasure(np.zeros(4), s1)
        g2 = GaussianMeasure(np.zeros(4), s2)
        w2 = lm.gaussian_w2(g1, g2, SpdMatrix.identity(4))
        c1, c2 = s1.inverse().mat, s2.inverse().mat
        cross = np.sum(np.sqrt(np.real(np.linalg.eigvals(c1 @ c2))))
        expected = np.sqrt(max(np.trace(c1) + np.trace(c2) - 2 * cross, 0.0))
        assert w2 == pytest.approx(expected, rel=1e-9)


class TestGaussianFisherInfo:
    def test_identical_measures(self):
        rng = np.random.default_rng(12)
        g = _random_gaussian(rng, 3)
        assert lm.gaussian_fisher_info(g, g, SpdMatrix.identity(3)) == 0.0

    def test_equal_covariance_closed_form(self):
        rng = np.random.default_rng(14)
        b = random_spd(rng, 4)
        m1, m2 = rng.standard_normal(4), rng.standard_normal(4)
        got = lm.gaussian_fisher_info(
            GaussianMeasure(m1, b), GaussianMeasure(m2, b), SpdMatrix.identity(4)
        )
        expected = float(np.linalg.norm(b.mat @ (m1 - m2)) ** 2)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_1d_frozen_value(self):
        g1 = GaussianMeasure([0.0], SpdMatrix([[1.0]]))
        g2 = GaussianMeasure([0.0], SpdMatrix([[0.5]]))  # variance 2
        assert lm.gaussian_fisher_info(g1, g2, SpdMatrix.identity(1)) == pytest.approx(0.25)

    def test_nonnegative_randomized(self):
        rng = np.random.default_rng(16)
        for _ in range(30):
            dim = int(rng.integers(1, 4))
            m = random_spd(rng, dim)
            g1, g2 = _random_gaussian(rng, dim), _random_gaussian(rng, dim)
            assert lm.gaussian_fisher_info(g1, g2, m) >= 0.0

    def test_matches_1d_quadrature(self):
        rng = np.random.default_rng(18)
        for _ in range(10):
            m1, m2 = rng.normal(size=2)
            s1, s2 = np.exp(rng.normal(size=2) * 0.4)
            w = float(np.exp(rng.normal() * 0.3))
            g1 = GaussianMeasure([m1], SpdMatrix([[1.0 / s1**2]]))
            g2 = GaussianMeasure([m2], SpdMatrix([[1.0 / s2**2]]))
            got = lm.gaussian_fisher_info(g1, g2, SpdMatrix([[w]]))
            oracle = fisher_info_quadrature_1d(m1, s1, m2, s2, w)
            assert got == pytest.approx(oracle, rel=1e-6)


class TestTransportInformation:
    def test_w2_squared_below_fisher_info_in_b_geometry(self):
        # N(0, B^{-1}) with metric B satisfies W2^2 <= I with constant 1.
        rng = np.random.default_rng(20)
        for _ in range(50):
            dim = int(rng.integers(1, 5))
            b = random_spd(rng, dim)
            gamma = GaussianMeasure(np.zeros(dim), b)
            rho = _random_gaussian(rng, dim)
            w2 = lm.gaussian_w2(rho, gamma, b)
            info = lm.gaussian_fisher_info(rho, gamma, b)
            assert w2**2 <= info


class TestNormalCdf:
    def test_zero(self):
        assert lm.normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_symmetry(self):
        for x in (0.3, 1.7, 4.2, 9.0):
            assert lm.normal_cdf(x) + lm.normal_cdf(-x) == pytest.approx(1.0, abs=1e-14)

    def test_frozen_value_196(self):
        # high-precision quadrature oracle value (30 digits)
        assert abs(lm.normal_cdf(1.96) - 0.975002104851779565863415730959) < 1e-15

    def test_absolute_error_against_mpmath(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 30
        for x in np.linspace(-8.0, 8.0, 33):
            exact = float(mp.ncdf(mp.mpf(float(x))))
            assert abs(lm.normal_cdf(float(x)) - exact) <= 1e-12


class TestPgMean:
    def test_limit_at_zero(self):
        assert lm.pg_mean(0.0) == 0.25

    def test_below_quarter_for_positive(self):
        for c in (1e-3, 0.5, 2.0, 10.0, 200.0):
            assert lm.pg_mean(c) < 0.25

    def test_value_at_two(self):
        assert lm.pg_mean(2.0) == pytest.approx(np.tanh(1.0) / 4.0, rel=1e-15)

    def test_series_switch_continuity(self):
        t = lm.PG_SERIES_THRESHOLD
        below = lm.pg_mean(np.nextafter(t, 0.0))
        above = lm.pg_mean(t)
        assert abs(below - above) < 1e-13

    @given(st.floats(min_value=0.0, max_value=60.0), st.floats(min_value=1e-6, max_value=10.0))
    def test_strictly_decreasing(self, c, gap):
        assert lm.pg_mean(c + gap) < lm.pg_mean(c)

    def test_vanishes_at_infinity(self):
        assert lm.pg_mean(1e6) < 1e-6

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            lm.pg_mean(-0.1)


class TestPgMeanDeriv:
    def test_zero_at_origin(self):
        assert lm.pg_mean_deriv(0.0) == 0.0

    def test_matches_finite_difference(self):
        h = 1e-6
        fd = (lm.pg_mean(1.0 + h) - lm.pg_mean(1.0 - h)) / (2 * h)
        assert lm.pg_mean_deriv(1.0) == pytest.approx(fd, abs=1e-8)

    def test_derivative_times_arg_below_mean(self):
        for c in (0.5, 1.0, 3.0, 8.0, 40.0):
            assert abs(lm.pg_mean_deriv(c) * c) < lm.pg_mean(c)

    def test_series_switch_continuity(self):
        t = lm.PG_SERIES_THRESHOLD
        below = lm.pg_mean_deriv(np.nextafter(t, 0.0))
        above = lm.pg_mean_deriv(t)
        assert abs(below - above) < 1e-13


class TestFisherPositivity:
    def test_positive_for_distinct_measures(self):
        rng = np.random.default_rng(60)
        metric = SpdMatrix.identity(2)
        base = GaussianMeasure(np.zeros(2), SpdMatrix.identity(2))
        shifted = GaussianMeasure(np.array([0.1, 0.0]), SpdMatrix.identity(2))
        scaled = GaussianMeasure(np.zeros(2), SpdMatrix.identity(2, 1.3))
        assert lm.gaussian_fisher_info(shifted, base, metric) > 0.0
        assert lm.gaussian_fisher_info(scaled, base, metric) > 0.0
        for _ in range(10):
            g1 = GaussianMeasure(rng.standard_normal(2), random_spd(rng, 2))
            g2 = GaussianMeasure(rng.standard_normal(2), random_spd(rng, 2))
            assert lm.gaussian_fisher_info(g1, g2, metric) > 0.0


class TestFromCovariance:
    def test_precision_is_inverse(self):
        rng = np.random.default_rng(61)
        cov = random_spd(rng, 3)
        g = GaussianMeasure.from_covariance(np.zeros(3), cov)
        np.testing.assert_allclose(g.precision.mat @ cov.mat, np.eye(3), atol=1e-11)
        np.testing.assert_allclose(g.covariance.mat, cov.mat, atol=1e-11)


class TestConcurrentCaches:
    def test_shared_matrix_caches_are_thread_safe(self):
        # factorization caches may be populated lazily; concurrent readers
        # must all observe the same values
        import threading

        rng = np.random.default_rng(62)
        s = random_spd(rng, 20)
        b = rng.standard_normal(20)
        results = []

        def worker():
            inv = s.inverse().mat
            root = s.sqrt().mat
            x = s.solve(b)
            results.append((inv, root, x))

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        ref_inv, ref_root, ref_x = results[0]
        for inv, root, x in results[1:]:
            assert np.array_equal(inv, ref_inv)
            assert np.array_equal(root, ref_root)
            assert np.array_equal(x, ref_x)


class TestVectorization:
    def test_pg_functions_accept_arrays(self):
        c = np.array([0.0, 1e-6, 5e-3, 0.5, 3.0, 40.0])
        means = lm.pg_mean(c)
        derivs = lm.pg_mean_deriv(c)
        assert means.shape == c.shape and derivs.shape == c.shape
        for i, v in enumerate(c):
            assert means[i] == lm.pg_mean(float(v))
            assert derivs[i] == lm.pg_mean_deriv(float(v))

    def test_normal_helpers_accept_arrays(self):
        x = np.array([-8.0, -1.0, 0.0, 2.5])
        assert lm.normal_cdf(x).shape == x.shape
        assert lm.normal_pdf(x).shape == x.shape
        assert lm.normal_pdf_over_cdf(x).shape == x.shape
