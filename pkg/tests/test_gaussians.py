"""Diagonal-Gaussian algebra checks, including quadrature and pointwise oracles."""

import math

import numpy as np
import pytest

from stochproto import autodiff as ad
from stochproto import gaussians as gs
from stochproto.gaussians import DiagonalGaussian, log_density, product, product_identity_factor, sample


def random_gaussian(rng, dim, mean_scale=3.0, var_range=(0.1, 4.0)):
    mean = rng.normal(scale=mean_scale, size=dim)
    variance = rng.uniform(*var_range, size=dim)
    return DiagonalGaussian(mean, variance)


class TestLogDensity:
    def test_standard_normal_at_zero(self):
        g = DiagonalGaussian([0.0], [1.0])
        assert log_density(g, np.array([0.0])) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_standard_normal_at_one(self):
        g = DiagonalGaussian([0.0], [1.0])
        expected = -0.5 * math.log(2 * math.pi) - 0.5
        assert log_density(g, np.array([1.0])) == pytest.approx(expected, abs=1e-12)

    def test_factorizes_over_axes(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            g = random_gaussian(rng, 3)
            z = rng.normal(size=3)
            per_axis = sum(
                log_density(DiagonalGaussian(g.mean[i:i + 1], g.variance[i:i + 1]), z[i:i + 1])
                for i in range(3)
            )
            assert log_density(g, z) == pytest.approx(per_axis, rel=1e-12)

    def test_density_integrates_to_one(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            g = random_gaussian(rng, 1)
            zs = np.linspace(-40.0, 40.0, 200001)[:, None]
            dens = np.exp(log_density(g, zs))
            total = np.trapezoid(dens, zs[:, 0])
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_dimension_mismatch(self):
        g = DiagonalGaussian([0.0, 0.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            log_density(g, np.zeros(3))


class TestSample:
    def test_zero_noise_returns_mean(self):
        g = DiagonalGaussian([1.0, -2.0], [0.5, 3.0])
        np.testing.assert_array_equal(sample(g, np.zeros(2)), g.mean)

    def test_floor_variance_collapses_to_mean(self):
        g = DiagonalGaussian([4.0], [0.0])  # floored to 1e-8
        out = sample(g, np.array([5.0]))
        assert abs(out[0] - 4.0) < 1e-3

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(11)
        g = random_gaussian(rng, 3)
        u = rng.normal(size=(100_000, 3))
        draws = sample(g, u)
        n = draws.shape[0]
        se_mean = np.sqrt(g.variance / n)
        assert np.all(np.abs(draws.mean(axis=0) - g.mean) < 3 * se_mean)
        se_var = g.variance * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(draws.var(axis=0, ddof=1) - g.variance) < 3 * se_var)


class TestProduct:
    def test_single_input_identity(self):
        g = DiagonalGaussian([1.0, 2.0], [0.3, 0.7])
        out = product([g])
        np.testing.assert_allclose(out.mean, g.mean, rtol=1e-14)
        np.testing.assert_allclose(out.variance, g.variance, rtol=1e-14)

    def test_symmetric_equal_variance(self):
        out = product([DiagonalGaussian([0.0], [1.0]), DiagonalGaussian([2.0], [1.0])])
        assert out.mean[0] == pytest.approx(1.0, abs=1e-14)
        assert out.variance[0] == pytest.approx(0.5, abs=1e-14)

    def test_matches_quadrature_normalization(self):
        """Product density equals the grid-normalized pointwise density product."""
        rng = np.random.default_rng(42)
        zs = np.linspace(-20.0, 20.0, 100_001)
        dz = zs[1] - zs[0]
        for _ in range(10):
            parts = [random_gaussian(rng, 1, mean_scale=2.0, var_range=(0.3, 3.0)) for _ in range(3)]
            raw = np.ones_like(zs)
            for g in parts:
                raw *= np.exp(log_density(g, zs[:, None]))
            normalized = raw / (raw.sum() * dz)
            fused = product(parts)
            fused_density = np.exp(log_density(fused, zs[:, None]))
            assert np.abs(fused_density - normalized).max() < 1e-8

    def test_associativity(self):
        rng = np.random.default_rng(5)
        a, b, c = (random_gaussian(rng, 4) for _ in range(3))
        left = product([product([a, b]), c])
        right = product([a, b, c])
        np.testing.assert_allclose(left.mean, right.mean, atol=1e-12)
        np.testing.assert_allclose(left.variance, right.variance, atol=1e-12)

    def test_precision_adds(self):
        rng = np.random.default_rng(6)
        parts = [random_gaussian(rng, 3) for _ in range(4)]
        fused = product(parts)
        np.testing.assert_allclose(
            1.0 / fused.variance,
            sum(1.0 / g.variance for g in parts),
            rtol=1e-12,
        )

    def test_order_independent(self):
        rng = np.random.default_rng(7)
        parts = [random_gaussian(rng, 2) for _ in range(3)]
        fwd = product(parts)
        rev = product(parts[::-1])
        np.testing.assert_allclose(fwd.mean, rev.mean, atol=1e-13)
        np.testing.assert_allclose(fwd.variance, rev.variance, atol=1e-13)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            product([])


class TestProductIdentityFactor:
    def test_identical_standard_normals(self):
        g = DiagonalGaussian([0.0], [1.0])
        intersection, log_pref = product_identity_factor(g, g)
        assert intersection.mean[0] == pytest.approx(0.0, abs=1e-14)
        assert intersection.variance[0] == pytest.approx(0.5, abs=1e-14)
        assert log_pref == pytest.approx(-0.5 * math.log(4 * math.pi), abs=1e-12)

    def test_pointwise_identity(self):
        """The central theorem: the split reproduces the two-density sum everywhere."""
        rng = np.random.default_rng(2024)
        for _ in range(50):
            x = random_gaussian(rng, 2)
            y = random_gaussian(rng, 2)
            intersection, log_pref = product_identity_factor(x, y)
            for _ in range(100):
                z = rng.normal(scale=4.0, size=2)
                lhs = log_density(x, z) + log_density(y, z)
                rhs = log_density(intersection, z) + log_pref
                assert abs(lhs - rhs) < 1e-10

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        x, y = random_gaussian(rng, 3), random_gaussian(rng, 3)
        ixy, pxy = product_identity_factor(x, y)
        iyx, pyx = product_identity_factor(y, x)
        np.testing.assert_allclose(ixy.mean, iyx.mean, atol=1e-13)
        np.testing.assert_allclose(ixy.variance, iyx.variance, atol=1e-13)
        assert pxy == pytest.approx(pyx, rel=1e-12)


class TestVarianceFloor:
    def test_floor_applied_on_construction(self):
        g = DiagonalGaussian([0.0, 0.0], [0.0, 1e-12])
        assert np.all(g.variance >= gs.VARIANCE_FLOOR)

    def test_tensor_fields_supported(self):
        mean = ad.Tensor([1.0, 2.0])
        var = ad.Tensor([0.5, 0.25])
        g = DiagonalGaussian(mean, var)
        z = np.array([0.5, 1.5])
        out = log_density(g, z)
        out.backward()
        assert mean.grad is not None and var.grad is not None
        # d logN / d mean = (z - mean) / variance
        np.testing.assert_allclose(mean.grad, (z - mean.data) / var.data, atol=1e-12)
