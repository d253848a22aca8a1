"""Tests for velocity families, eddy diffusivity and the generator A."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oumix.spectral import SpectralField, coeffs_to_grid, grid_to_coeffs, random_field, wavenumber_sq, wavenumbers
from oumix.velocity import (
    ConvergenceError,
    VelocityFamily,
    apply_eddy_diffusivity,
    assemble_A,
    build_trig_family,
    concat_families,
    eddy_operator_norm,
    epsilon,
    family_from_recipe,
    gram,
    isotropy_matrix,
    mu,
    principal_eigenvalue,
    shell_modes,
    zero_family,
)

ANISO = {"d": 2, "shells": [{"modes": [[1, 0], [1, 2]], "amplitude": 0.4, "pattern": "single"}]}


def eddy_by_grid(fam, f):
    """``1/2 sum_j u_j . grad(u_j . grad f)`` on a fine grid (brute force)."""
    d, N = f.d, f.N
    M = 4 * (N + 2 * fam.K) + 4
    ug = fam.grid(M)
    kv = wavenumbers(d, N)
    out = 0
    for j in range(fam.J):
        df = [coeffs_to_grid(1j * kv[i] * f.coeffs, d, M) for i in range(d)]
        w = sum(ug[j, i] * df[i] for i in range(d))
        Nw = (M - 1) // 2
        wc = grid_to_coeffs(w, d, Nw)
        kw = wavenumbers(d, Nw)
        dw = [coeffs_to_grid(1j * kw[i] * wc, d, M) for i in range(d)]
        out = out + 0.5 * sum(ug[j, i] * dw[i] for i in range(d))
    return grid_to_coeffs(out, d, N)


def dense_minus_A(A):
    """Matrix of ``-A`` in the real orthogonal basis ``{cos, sin}`` of the
    truncated space."""
    d, N = A.d, A.N
    shape = (2 * N + 1,) * d
    half = [k for k in np.ndindex(*shape) if tuple(x - N for x in k) > (0,) * d]
    basis = []
    for k in half:
        mk = tuple(2 * N - x for x in k)
        for ph in (1.0, 1j):
            c = np.zeros(shape, dtype=complex)
            c[k] += ph
            c[mk] += np.conj(ph)
            basis.append(c / math.sqrt(2))
    B = np.array([b.ravel() for b in basis])
    AB = np.array([-A.apply_coeffs(b).ravel() for b in basis])
    return np.real(np.conj(B) @ AB.T)


class TestFamilies:
    @pytest.mark.parametrize("d,r", [(2, 1), (2, 5), (3, 1), (3, 2)])
    def test_trig_family_is_divergence_free_and_real(self, d, r):
        fam = build_trig_family(d, shell_modes(d, r), 0.3)
        kv = wavenumbers(d, fam.K)
        div = sum(kv[i] * fam.coeffs[:, i] for i in range(d))
        assert np.max(np.abs(div)) < 1e-12
        g = fam.grid(16)
        assert np.all(np.isfinite(g))

    def test_isotropic_pairs_are_isotropic(self):
        for d in (2, 3):
            fam = build_trig_family(d, shell_modes(d, 1), 0.5)
            iso = isotropy_matrix(fam)
            assert iso.isotropic
            # a(x) = a^2 sum_k (I - k k^t/|k|^2) over the |S| representatives
            S = len(shell_modes(d, 1))
            assert iso.kappa_bar == pytest.approx(0.25 * S * (d - 1) / (2 * d), rel=1e-12)

    def test_single_pattern_not_isotropic(self):
        assert not isotropy_matrix(family_from_recipe(ANISO)).isotropic

    def test_kappa_bar_recipe(self):
        fam = family_from_recipe({"d": 3, "shells": [{"radius_sq": 1, "kappa_bar": 0.37}]})
        assert isotropy_matrix(fam).kappa_bar == pytest.approx(0.37, rel=1e-12)

    def test_rejections(self):
        with pytest.raises(ValueError, match="nonempty"):
            build_trig_family(2, [], 1.0)
        with pytest.raises(ValueError, match="k = 0"):
            build_trig_family(2, [(0, 0)], 1.0)
        with pytest.raises(ValueError, match="d-1"):
            build_trig_family(2, [(1, 0)], 1.0, n_polarizations=2)
        with pytest.raises(ValueError, match="orthogonal"):
            build_trig_family(2, [(1, 0)], 1.0, pattern="single", polarizations=[[1.0, 0.0]])

    def test_rejects_compressible_field(self):
        c = np.zeros((1, 2, 3, 3), dtype=complex)
        c[0, 0, 2, 1] = c[0, 0, 0, 1] = 1.0  # u = (cos x1, 0): div != 0
        with pytest.raises(ValueError, match="divergence"):
            VelocityFamily(c)

    def test_duplicate_modes_merged(self):
        a = build_trig_family(2, [(1, 0), (-1, 0)], 1.0)
        b = build_trig_family(2, [(1, 0)], 1.0)
        assert a.J == b.J

    def test_sup_norm_of_cos_field(self):
        fam = build_trig_family(2, [(1, 1)], 0.7, pattern="single")
        assert fam.sup_norms()[0] == pytest.approx(0.7, rel=1e-12)

    def test_epsilon_and_gram(self):
        assert epsilon(zero_family(2)) == 0.0
        fam = build_trig_family(2, [(1, 0)], 0.1, pattern="single")
        # ||0.1 cos x1||_{L^2(T^2)}^2 = 0.01 * 2 pi^2
        assert epsilon(fam) == pytest.approx(0.1 * math.pi * math.sqrt(2), rel=1e-12)
        G = gram(build_trig_family(3, shell_modes(3, 2), 1.0))
        assert np.all(np.linalg.eigvalsh(G) > -1e-10)

    def test_concat(self):
        a = build_trig_family(2, [(1, 0)], 1.0)
        b = build_trig_family(2, [(1, 2)], 1.0)
        c = concat_families(a, b)
        assert c.J == a.J + b.J and c.K == 2


class TestEddyDiffusivity:
    def test_isotropic_equals_laplacian(self):
        fam = family_from_recipe({"d": 3, "shells": [{"radius_sq": 1, "kappa_bar": 0.5}]})
        f = random_field(3, 3, np.random.default_rng(0))
        Lf = apply_eddy_diffusivity(fam, f)
        np.testing.assert_allclose(Lf.coeffs, -0.5 * wavenumber_sq(3, 3) * f.coeffs, atol=1e-12)

    @pytest.mark.parametrize("N", [2, 4])
    def test_matches_grid_evaluation(self, N):
        fam = family_from_recipe(ANISO)
        f = random_field(2, N, np.random.default_rng(N))
        np.testing.assert_allclose(apply_eddy_diffusivity(fam, f).coeffs, eddy_by_grid(fam, f), atol=1e-11)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_symmetric_negative(self, seed):
        fam = family_from_recipe(ANISO)
        rng = np.random.default_rng(seed)
        f, g = random_field(2, 4, rng), random_field(2, 4, rng)
        Lf, Lg = apply_eddy_diffusivity(fam, f), apply_eddy_diffusivity(fam, g)
        ip = lambda a, b: float(np.real(np.vdot(b.coeffs, a.coeffs)))  # noqa: E731
        assert ip(Lf, g) == pytest.approx(ip(f, Lg), abs=1e-10)
        assert ip(Lf, f) <= 1e-12

    def test_zero_family(self):
        f = random_field(2, 3, np.random.default_rng(0))
        assert np.all(apply_eddy_diffusivity(zero_family(2), f).coeffs == 0)


class TestGenerator:
    def test_rejects_bad_kappa(self):
        with pytest.raises(ValueError):
            assemble_A(zero_family(2), 1.5, 4)

    def test_isotropic_eigenvalue(self):
        fam = family_from_recipe({"d": 2, "shells": [{"radius_sq": 1, "kappa_bar": 0.5}]})
        assert principal_eigenvalue(assemble_A(fam, 0.01, 8)) == pytest.approx(0.51, abs=1e-8)

    def test_eigenvalue_against_dense(self):
        A = assemble_A(family_from_recipe(ANISO), 0.05, 3)
        ref = np.linalg.eigvalsh(dense_minus_A(A))[0]
        assert principal_eigenvalue(A) == pytest.approx(ref, rel=1e-7)

    def test_singular_operator(self):
        with pytest.raises(ConvergenceError):
            principal_eigenvalue(assemble_A(zero_family(2), 0.0, 3), maxiter=5)

    def test_decay_bound_on_effective_energy(self):
        A = assemble_A(family_from_recipe(ANISO), 0.05, 3)
        lam = principal_eigenvalue(A)
        f = random_field(2, 3, np.random.default_rng(2))
        af = -float(np.real(np.vdot(f.coeffs, A.apply_coeffs(f.coeffs))))
        assert af >= lam * float(np.vdot(f.coeffs, f.coeffs).real) * (1 - 1e-9)


class TestMu:
    def test_gamma_range(self):
        fam = family_from_recipe(ANISO)
        for g in (0.0, 1 / 6, 0.3):
            with pytest.raises(ValueError, match="d-2"):
                mu(fam, g)

    def test_report(self):
        fam = family_from_recipe({"d": 2, "shells": [{"radius_sq": 1, "kappa_bar": 0.5}]})
        r = mu(fam, 0.1)
        assert r.value == max(r.sobolev_term, r.linf_term, r.operator_term)
        assert r.effective_dim == 3 and r.sobolev_index == pytest.approx(1.4)
        # L = kappa_bar Delta, so ||L||_{H^2 -> L^2} = kappa_bar
        assert r.operator_term == pytest.approx(math.sqrt(0.5), rel=1e-6)
        assert not r.flag_le_one

    def test_small_family_flagged(self):
        r = mu(build_trig_family(2, [(1, 0)], 1e-3), 0.1)
        assert r.flag_le_one

    def test_operator_norm_zero_family(self):
        assert eddy_operator_norm(zero_family(2), 4) == 0.0
