"""Tests for the OU drivers and their iterated integrals."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oumix.ou import (
    FrozenPath,
    OuConfig,
    OuPath,
    conditional_mean_c,
    exact_step,
    exact_step_joint,
    iterated_integral_c,
    iterated_integral_from_integrals,
    make_rng,
    quadrature_error_scale,
    simulate_batch,
    simulate_path,
    sup_moment_scaling,
    transition_moments,
    unconditional_mean_c,
)


def zscore(samples, target):
    samples = np.asarray(samples)
    return abs(samples.mean() - target) / (samples.std(ddof=1) / math.sqrt(samples.size))


class TestConfig:
    def test_alpha_must_exceed_one(self):
        with pytest.raises(ValueError, match="alpha"):
            OuConfig(1.0, 1, 0.01)

    def test_substep_rule(self):
        with pytest.raises(ValueError, match="0.2"):
            OuConfig(100.0, 1, 0.01)
        OuConfig(100.0, 1, 0.01, strict=False)

    def test_steps_must_divide_horizon(self):
        with pytest.raises(ValueError, match="multiple"):
            OuConfig(10.0, 1, 0.003).n_steps


class TestSeeding:
    def test_member_streams_are_reproducible_and_distinct(self):
        a = make_rng(5, 3).standard_normal(4)
        b = make_rng(5, 3).standard_normal(4)
        c = make_rng(5, 4).standard_normal(4)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)

    def test_path_bitwise_reproducible(self):
        cfg = OuConfig(50.0, 2, 0.002)
        p, q = simulate_path(cfg, make_rng(1, 0)), simulate_path(cfg, make_rng(1, 0))
        np.testing.assert_array_equal(p.values, q.values)
        np.testing.assert_array_equal(p.dW, q.dW)


class TestExactStep:
    def test_zero_step_is_identity(self):
        x = np.array([0.3, -2.0])
        np.testing.assert_array_equal(exact_step(x, 30.0, 0.0, np.ones(2)), x)

    def test_long_step_limit(self):
        alpha = 7.0
        assert exact_step(5.0, alpha, 1e4, 0.0) == pytest.approx(0.0)
        assert exact_step(0.0, alpha, 1e4, 1.0) == pytest.approx(math.sqrt(alpha / 2))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1.5, 1e4), st.floats(1e-6, 1.0))
    def test_joint_step_matches_marginal(self, alpha, h):
        xi = np.array([0.4, -1.1])
        e1, _ = exact_step_joint(0.7, alpha, h, xi)
        e2 = exact_step(0.7, alpha, h, xi[0])
        assert e1 == pytest.approx(e2, rel=1e-10, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1.5, 1e4), st.floats(1e-6, 1.0))
    def test_covariance_is_psd(self, alpha, h):
        _, cov = transition_moments(alpha, h)
        assert np.linalg.eigvalsh(cov)[0] >= -1e-15 * max(1.0, cov.max())

    def test_sde_relation_exact(self):
        p = simulate_path(OuConfig(40.0, 3, 0.001), make_rng(2))
        lhs = np.diff(p.values, axis=0)
        rhs = -40.0 * p.integrals + 40.0 * p.dW
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_grid_lookup_only(self):
        p = simulate_path(OuConfig(40.0, 1, 0.001), make_rng(2))
        np.testing.assert_array_equal(p.sample([0.0, 0.5]), p.values[[0, 500]])
        with pytest.raises(ValueError, match="grid"):
            p.sample(0.00025)


class TestStatistics:
    @pytest.mark.parametrize("alpha", [10.0, 100.0])
    def test_stationary_marginal(self, alpha):
        vals, _ = simulate_batch(alpha, 0.2 / alpha, 20, 1, make_rng(3, int(alpha)), 10_000)
        res = stats.kstest(vals[:, -1, 0] / math.sqrt(alpha / 2), "norm")
        assert res.pvalue > 1e-3

    def test_two_steps_equal_one(self):
        alpha, h, n = 20.0, 0.005, 20_000
        v1, _ = simulate_batch(alpha, h, 2, 1, make_rng(4, 0), n)
        v2, _ = simulate_batch(alpha, 2 * h, 1, 1, make_rng(4, 1), n)
        c1 = v1[:, 0, 0] * v1[:, 2, 0]
        c2 = v2[:, 0, 0] * v2[:, 1, 0]
        se = math.sqrt(c1.var(ddof=1) / n + c2.var(ddof=1) / n)
        assert abs(c1.mean() - c2.mean()) <= 4 * se

    def test_brownian_increment_variance(self):
        alpha, h = 30.0, 0.004
        p = simulate_path(OuConfig(alpha, 1, h, horizon=8.0), make_rng(5))
        dW = p.dW[:, 0]
        assert zscore(dW**2, h) < 4

    def test_sup_moment_p0(self):
        t = sup_moment_scaling([10.0, 40.0], 0.0, 20)
        np.testing.assert_array_equal(t.means, 1.0)


class TestIteratedIntegrals:
    def test_constant_path(self):
        p = OuPath.from_values(10.0, 0.01, np.full(101, 2.5))
        assert iterated_integral_c(p, 0, 0, 0, 0.5) == pytest.approx(2.5**2 * 0.25 / 2, rel=1e-12)

    def test_interval_checks(self):
        p = OuPath.from_values(10.0, 0.01, np.zeros(101))
        with pytest.raises(ValueError, match="outside"):
            iterated_integral_c(p, 0, 0, 2, 0.5)
        with pytest.raises(ValueError, match="refine"):
            iterated_integral_c(p, 0, 0, 0, 0.015)

    def test_diagonal_is_half_square(self):
        p = simulate_path(OuConfig(80.0, 2, 0.001), make_rng(6))
        S = p.integrals[:100, 0]
        assert iterated_integral_from_integrals(S, S) == pytest.approx(0.5 * S.sum() ** 2, rel=1e-12)

    def test_stationary_mean(self):
        alpha, delta, n = 200.0, 0.05, 40_000
        _, S = simulate_batch(alpha, delta / 100, 100, 1, make_rng(7), n)
        c = iterated_integral_from_integrals(S[:, :, 0], S[:, :, 0])
        assert zscore(c, unconditional_mean_c(alpha, delta, True)) < 4

    def test_independent_components(self):
        _, S = simulate_batch(50.0, 0.001, 50, 2, make_rng(8), 20_000)
        c = iterated_integral_from_integrals(S[:, :, 0], S[:, :, 1])
        assert zscore(c, 0.0) < 4

    def test_quadrature_error_scale(self):
        assert quadrature_error_scale(100.0, 0.001, 0.1) == pytest.approx(1e-3)


class TestConditionalMean:
    def test_stratonovich_limit(self):
        assert conditional_mean_c(0.0, 0.0, 1e12, 1.0, True) == pytest.approx(0.5, abs=1e-11)

    def test_off_diagonal_value(self):
        ref = 6 * (1e-2 / 2) * (1 - math.exp(-1)) ** 2
        assert conditional_mean_c(2.0, 3.0, 10.0, 0.1, False) == pytest.approx(ref, rel=1e-14)

    def test_zero_interval(self):
        assert conditional_mean_c(1.0, 2.0, 10.0, 0.0, True) == 0.0

    def test_averages_to_stationary_mean(self):
        alpha, delta = 37.0, 0.03
        em = -math.expm1(-alpha * delta)
        avg = (alpha / 2) * em**2 / (2 * alpha**2) + conditional_mean_c(0.0, 0.0, alpha, delta, True)
        assert avg == pytest.approx(unconditional_mean_c(alpha, delta, True), rel=1e-12)

    @pytest.mark.parametrize("alpha,delta", [(10.0, 0.1), (100.0, 0.01)])
    def test_conditioned_monte_carlo(self, alpha, delta):
        e0 = np.array([1.2, -0.7]) * math.sqrt(alpha / 2)
        _, S = simulate_batch(alpha, delta / 64, 64, 2, make_rng(9, int(alpha)), 20_000, eta0=e0)
        for j, jp in ((0, 0), (0, 1), (1, 1)):
            c = iterated_integral_from_integrals(S[:, :, j], S[:, :, jp])
            assert zscore(c, conditional_mean_c(e0[j], e0[jp], alpha, delta, j == jp)) < 4


class TestFrozenPath:
    def test_interpolates_knots(self):
        p = simulate_path(OuConfig(20.0, 2, 0.01), make_rng(10))
        fp = FrozenPath(p, knot_stride=4)
        np.testing.assert_allclose(fp.sample(p.times[::4]), p.values[::4], atol=1e-12)
        with pytest.raises(ValueError):
            fp.sample(1.5)
        with pytest.raises(ValueError, match="divide"):
            FrozenPath(p, knot_stride=7)
