"""Tests for the Fourier representation, norms and dealiased products."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oumix.spectral import (
    GridField,
    SpectralField,
    apply_derivative,
    coeffs_to_grid,
    dealiased_product,
    forward,
    from_half,
    half_multiplicity,
    hermitian_defect,
    inner,
    laplacian,
    lift_2d_to_3d,
    load_field,
    pad,
    project_modes,
    random_field,
    save_field,
    shell_random_field,
    shell_spectrum,
    sobolev_norm,
    to_grid,
    to_half,
    truncate,
    wavenumber_sq,
)


def brute_convolution(a, b, d):
    N = a.shape[0] // 2
    out = np.zeros_like(a)
    for p in np.ndindex(*a.shape):
        if a[p] == 0:
            continue
        for q in np.ndindex(*a.shape):
            k = tuple(p[i] + q[i] - N for i in range(d))
            if all(0 <= x <= 2 * N for x in k):
                out[k] += a[p] * b[q]
    out[(N,) * d] = 0
    return out * (2 * np.pi) ** (-d / 2)


seeds = st.integers(0, 2**31 - 1)


class TestSpectralField:
    def test_rejects_non_hermitian(self):
        c = np.zeros((5, 5), dtype=complex)
        c[3, 2] = 1.0
        with pytest.raises(ValueError, match="Hermitian"):
            SpectralField(c)

    def test_rejects_nonzero_mean(self):
        c = np.zeros((5, 5), dtype=complex)
        c[2, 2] = 1.0
        with pytest.raises(ValueError, match="zero mode"):
            SpectralField(c)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            SpectralField(np.zeros((4, 4), dtype=complex))

    def test_coeffs_are_read_only(self):
        f = random_field(2, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            f.coeffs[0, 0] = 1.0

    def test_from_modes_fills_conjugates(self):
        f = SpectralField.from_modes(2, 3, {(1, 2): 1 + 2j})
        assert f.coefficient((-1, -2)) == 1 - 2j
        assert f.coefficient((5, 0)) == 0

    def test_from_modes_outside_cutoff(self):
        with pytest.raises(ValueError, match="outside cutoff"):
            SpectralField.from_modes(2, 2, {(3, 0): 1.0})

    def test_arithmetic(self):
        rng = np.random.default_rng(1)
        f, g = random_field(2, 3, rng), random_field(2, 3, rng)
        np.testing.assert_allclose((f + g - g).coeffs, f.coeffs)
        np.testing.assert_allclose((2.0 * f).coeffs, 2 * f.coeffs)
        np.testing.assert_allclose((-f).coeffs, -f.coeffs)

    def test_incompatible_addition(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError, match="incompatible"):
            random_field(2, 3, rng) + random_field(2, 4, rng)

    def test_sin_coefficients(self):
        # sin(x1) = (e^{ix} - e^{-ix}) / (2i) and e_k = (2 pi)^{-1} e^{ikx} in d = 2
        f = SpectralField.from_function(2, 4, lambda x, y: np.sin(x))
        assert f.coefficient((1, 0)) == pytest.approx(-1j * math.pi, abs=1e-12)
        assert sobolev_norm(f, 0) == pytest.approx(math.sqrt(2) * math.pi, rel=1e-12)


class TestTransforms:
    @settings(max_examples=25, deadline=None)
    @given(seeds, st.sampled_from([2, 3]), st.integers(1, 5))
    def test_round_trip(self, seed, d, N):
        f = random_field(d, N, np.random.default_rng(seed))
        g = forward(to_grid(f), N)
        np.testing.assert_allclose(g.coeffs, f.coeffs, atol=1e-12)

    def test_grid_values_of_single_mode(self):
        f = SpectralField.from_modes(2, 2, {(1, 0): 0.5})
        g = to_grid(f, 8).values
        x = np.arange(8) * 2 * np.pi / 8
        np.testing.assert_allclose(g[:, 0], np.cos(x) / (2 * np.pi), atol=1e-14)

    def test_parseval(self):
        f = random_field(3, 3, np.random.default_rng(2))
        M = 8
        g = coeffs_to_grid(f.coeffs, 3, M)
        assert np.sum(g**2) * (2 * np.pi / M) ** 3 == pytest.approx(sobolev_norm(f, 0) ** 2, rel=1e-12)

    def test_grid_too_small(self):
        f = random_field(2, 4, np.random.default_rng(0))
        with pytest.raises(ValueError, match="too small"):
            to_grid(f, 6)

    def test_gridfield_mean_check(self):
        with pytest.raises(ValueError, match="zero mean"):
            GridField(np.ones((4, 4)))


class TestNormsAndDerivatives:
    def test_norm_definition(self):
        f = SpectralField.from_modes(2, 3, {(1, 1): 1.0, (0, 2): 2.0})
        # |k|^2 = 2 and 4; each mode appears with its conjugate
        assert sobolev_norm(f, 1) == pytest.approx(math.sqrt(2 * (2 * 1) + 2 * (4 * 4)))
        assert sobolev_norm(f, -1) == pytest.approx(math.sqrt(2 * (1 / 2) + 2 * (4 / 4)))

    def test_inner_is_norm_squared(self):
        f = random_field(3, 2, np.random.default_rng(3))
        assert inner(f, f, 0.5) == pytest.approx(sobolev_norm(f, 0.5) ** 2)

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
    def test_interpolation_inequality(self, seed, s0, s1, th):
        f = random_field(2, 4, np.random.default_rng(seed), decay=1.0)
        s = (1 - th) * s0 + th * s1
        assert sobolev_norm(f, s) <= sobolev_norm(f, s0) ** (1 - th) * sobolev_norm(f, s1) ** th * (1 + 1e-10)

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.integers(1, 6))
    def test_projection_bound(self, seed, Nc):
        f = random_field(3, 4, np.random.default_rng(seed))
        assert sobolev_norm(project_modes(f, Nc), 0) <= Nc * sobolev_norm(f, -1) * (1 + 1e-12)

    def test_laplacian_matches_h1(self):
        f = random_field(2, 4, np.random.default_rng(4))
        assert -inner(laplacian(f), f) == pytest.approx(sobolev_norm(f, 1) ** 2)

    def test_derivative_dispatch(self):
        f = SpectralField.from_modes(2, 3, {(2, 0): 1.0})
        assert apply_derivative(f, "gradient", 0).coefficient((2, 0)) == 2j
        assert apply_derivative(f, "laplacian").coefficient((2, 0)) == -4
        assert apply_derivative(f, "fractional_power", 1.0).coefficient((2, 0)) == pytest.approx(2.0)
        with pytest.raises(ValueError):
            apply_derivative(f, "curl")

    def test_gradient_on_grid(self):
        f = SpectralField.from_function(2, 4, lambda x, y: np.sin(2 * x) * np.cos(y))
        g = to_grid(apply_derivative(f, "gradient", 0), 16).values
        x = np.arange(16) * 2 * np.pi / 16
        X, Y = np.meshgrid(x, x, indexing="ij")
        np.testing.assert_allclose(g, 2 * np.cos(2 * X) * np.cos(Y), atol=1e-12)


class TestProducts:
    @pytest.mark.parametrize("d,N", [(2, 1), (2, 3), (2, 5), (3, 1), (3, 2)])
    def test_matches_brute_force(self, d, N):
        rng = np.random.default_rng(10 * d + N)
        f, g = random_field(d, N, rng), random_field(d, N, rng)
        np.testing.assert_allclose(dealiased_product(f, g).coeffs, brute_convolution(f.coeffs, g.coeffs, d),
                                   atol=1e-12)

    def test_product_of_sines(self):
        f = SpectralField.from_function(2, 4, lambda x, y: np.sin(x))
        p = dealiased_product(f, f)
        # sin^2 x = 1/2 - cos(2x)/2, the mean is dropped
        q = SpectralField.from_function(2, 4, lambda x, y: -0.5 * np.cos(2 * x))
        np.testing.assert_allclose(p.coeffs, q.coeffs, atol=1e-12)

    def test_commutative(self):
        rng = np.random.default_rng(5)
        f, g = random_field(3, 2, rng), random_field(3, 2, rng)
        np.testing.assert_allclose(dealiased_product(f, g).coeffs, dealiased_product(g, f).coeffs, atol=1e-14)


class TestResizeLiftIO:
    def test_pad_truncate(self):
        f = random_field(2, 3, np.random.default_rng(6))
        np.testing.assert_array_equal(truncate(pad(f, 6), 3).coeffs, f.coeffs)
        with pytest.raises(ValueError):
            pad(f, 2)
        with pytest.raises(ValueError):
            truncate(f, 5)

    def test_lift_preserves_norms(self):
        f = random_field(2, 3, np.random.default_rng(7))
        g = lift_2d_to_3d(f)
        assert g.d == 3
        for s in (-1.0, 0.0, 1.5):
            assert sobolev_norm(g, s) == pytest.approx(sobolev_norm(f, s))
        vals2 = to_grid(f, 8).values
        vals3 = to_grid(g, 8).values
        np.testing.assert_allclose(vals3[:, :, 0], vals2 / math.sqrt(2 * math.pi), atol=1e-14)

    def test_save_load(self, tmp_path):
        f = random_field(3, 2, np.random.default_rng(8))
        save_field(f, tmp_path / "f")
        np.testing.assert_array_equal(load_field(tmp_path / "f").coeffs, f.coeffs)

    def test_half_layout_round_trip(self):
        f = random_field(3, 3, np.random.default_rng(9))
        np.testing.assert_allclose(from_half(to_half(f.coeffs, 3), 3), f.coeffs, atol=1e-15)
        h = to_half(f.coeffs, 3)
        assert np.sum(half_multiplicity(3, 3) * np.abs(h) ** 2) == pytest.approx(sobolev_norm(f, 0) ** 2)

    def test_shell_random_field(self):
        f = shell_random_field(2, 6, np.random.default_rng(3))
        k2 = wavenumber_sq(2, 6)
        a = np.abs(f.coeffs)
        assert sobolev_norm(f, 0) == pytest.approx(1.0)
        assert np.all(a[(k2 < 1) | (k2 > 4)] == 0)
        sel = a[(k2 >= 1) & (k2 <= 4)]
        np.testing.assert_allclose(sel, sel[0])
        assert hermitian_defect(f.coeffs) == 0

    def test_shell_spectrum_sums_to_energy(self):
        f = random_field(2, 4, np.random.default_rng(0))
        shells, e = shell_spectrum(f.coeffs, 2)
        assert shells[0] == 0 and e[0] == 0
        assert e.sum() == pytest.approx(sobolev_norm(f, 0) ** 2)
