"""Self-validation suite.

``fast`` runs analytic oracles and exact identities only; ``full`` adds the
Monte Carlo checks of the OU driver.  Every check returns a
:class:`CheckResult`; failures are results, not exceptions.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..diagnostics import discrete_holder_functional, mixing_error
from ..ou import (
    OuConfig,
    OuPath,
    conditional_mean_c,
    exact_step,
    iterated_integral_c,
    iterated_integral_from_integrals,
    make_rng,
    simulate_batch,
    simulate_path,
    transition_moments,
    unconditional_mean_c,
)
from ..solvers import SolverConfig, solve_advection_diffusion, solve_effective, stability_limit
from ..spectral import (
    HERMITIAN_RTOL,
    SpectralField,
    dealiased_product,
    hermitian_defect,
    project_modes,
    random_field,
    shell_random_field,
    sobolev_norm,
    wavenumbers,
)
from ..velocity import (
    apply_eddy_diffusivity,
    assemble_A,
    family_from_recipe,
    isotropy_matrix,
    principal_eigenvalue,
    zero_family,
)

FAULTS = ("hermitian",)


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    passed: bool
    detail: str
    seconds: float


def _brute_product(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    N = a.shape[0] // 2
    out = np.zeros_like(a)
    idx = list(np.ndindex(*a.shape))
    for p in idx:
        if a[p] == 0:
            continue
        for q in idx:
            k = tuple(p[i] + q[i] - N for i in range(d))
            if all(0 <= ki <= 2 * N for ki in k):
                out[k] += a[p] * b[q]
    out[(N,) * d] = 0
    return out * (2 * np.pi) ** (-d / 2)


def _hermitian_scan(inject_fault: str | None):
    rng = np.random.default_rng(1)
    fields = [random_field(d, N, rng).coeffs for d in (2, 3) for N in (2, 5)]
    if inject_fault == "hermitian":
        c = fields[0].copy()
        c[0, 1] += 0.37j
        fields[0] = c
    worst = max(hermitian_defect(c) for c in fields)
    return worst <= HERMITIAN_RTOL, f"max Hermitian defect {worst:.2e} (tolerance {HERMITIAN_RTOL:g})"


def _product_oracle():
    rng = np.random.default_rng(2)
    err = 0.0
    for trial in range(12):
        d = 2 if trial % 3 else 3
        N = int(rng.integers(1, 5 if d == 2 else 3))
        f, g = random_field(d, N, rng), random_field(d, N, rng)
        e = np.max(np.abs(dealiased_product(f, g).coeffs - _brute_product(f.coeffs, g.coeffs, d)))
        err = max(err, e)
    return err <= 1e-12, f"max deviation from brute-force convolution {err:.2e}"


def _interpolation():
    rng = np.random.default_rng(3)
    worst = -np.inf
    for _ in range(100):
        d = int(rng.choice([2, 3]))
        f = random_field(d, 4, rng, decay=float(rng.uniform(0, 2)))
        s0, s1 = sorted(rng.uniform(-3, 3, size=2))
        th = float(rng.uniform())
        s = (1 - th) * s0 + th * s1
        lhs = sobolev_norm(f, s)
        rhs = sobolev_norm(f, s0) ** (1 - th) * sobolev_norm(f, s1) ** th
        worst = max(worst, (lhs - rhs) / rhs)
    return worst <= 1e-10, f"max relative excess of ||f||_s over the interpolation bound {worst:.2e}"


def _projection_bound():
    rng = np.random.default_rng(4)
    worst = -np.inf
    for _ in range(100):
        d = int(rng.choice([2, 3]))
        f = random_field(d, 5, rng)
        Nc = int(rng.integers(1, 6))
        worst = max(worst, sobolev_norm(project_modes(f, Nc), 0) - Nc * sobolev_norm(f, -1))
    return worst <= 1e-12, f"max of ||pi_N f|| - N ||f||_(-1): {worst:.2e}"


ISO_RECIPE = {"d": 2, "shells": [{"radius_sq": 1, "kappa_bar": 0.5}]}


def _eddy_isotropic():
    fam = family_from_recipe(ISO_RECIPE)
    iso = isotropy_matrix(fam)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(5):
        f = random_field(2, 6, rng)
        Lf = apply_eddy_diffusivity(fam, f).coeffs
        ref = -iso.kappa_bar * sum(k**2 for k in wavenumbers(2, 6)) * f.coeffs
        worst = max(worst, np.max(np.abs(Lf - ref)) / np.max(np.abs(ref)))
    lam = principal_eigenvalue(assemble_A(fam, 0.01, 6))
    lerr = abs(lam - (0.01 + iso.kappa_bar))
    return worst <= 1e-10 and lerr <= 1e-8, f"L vs kappa_bar Laplacian {worst:.2e}; |lambda - (kappa+kappa_bar)| {lerr:.2e}"


def _ou_identities():
    a = 50.0
    ok = True
    x = np.array([1.3, -0.4])
    ok &= np.allclose(exact_step(x, a, 0.0, np.array([0.7, 0.2])), x)
    rho, cov = transition_moments(a, 1e3)
    ok &= rho == 0.0 and abs(cov[1, 1] - 1e3) < 1e-9
    zl = conditional_mean_c(0.0, 0.0, a, 1e3, True)
    ok &= abs(zl - 1e3 / 2 + (1 - 0.25) / a) < 1e-12
    lim = conditional_mean_c(0.0, 0.0, 1e6, 10.0, True)
    path = OuPath.from_values(a, 0.01, np.full(101, 1.7))
    cc = iterated_integral_c(path, 0, 0, 0, 1.0)
    ok &= abs(cc - 1.7**2 / 2) < 1e-12
    ok &= conditional_mean_c(2.0, 3.0, 10.0, 0.0, False) == 0.0
    return bool(ok), (f"zero-state eta*delta limit {lim:.12g} (delta/2 = 5); constant-path c = {cc:.12g} "
                      f"(expected {1.7**2 / 2:.12g})")


def _heat_exact():
    fam = zero_family(2)
    f = SpectralField.from_modes(2, 4, {(1, 0): -0.5j * math.sqrt(2 * math.pi)})
    cfg = SolverConfig(0.5, 4, 0.01, 0.1, check_stability=False)
    path = OuPath.from_values(10.0, 0.005, np.zeros(201))
    rec = solve_advection_diffusion(f, fam, path, cfg)
    err = np.max(np.abs(rec.snapshots[-1] - math.exp(-0.5) * f.coeffs))
    return err <= 1e-12, f"heat semigroup single-mode error {err:.2e}"


def _kappa0_conservation():
    fam = family_from_recipe({"d": 2, "shells": [{"radius_sq": 1, "amplitude": 0.5}]})
    N, alpha = 8, 20.0
    dt = stability_limit(fam, N, alpha) / 32  # rough-driver drift is O(dt^2)
    n = int(math.ceil(0.25 / dt))
    dt = 0.25 / n
    rng = make_rng(9)
    f = shell_random_field(2, N, rng)
    path = OuConfig(alpha, fam.J, dt / 2, horizon=0.25)
    p = simulate_path(path, rng)
    rec = solve_advection_diffusion(f, fam, p, SolverConfig(0.0, N, dt, 0.25, horizon=0.25))
    drift = abs(math.sqrt(rec.l2sq[-1]) - math.sqrt(rec.l2sq[0])) / math.sqrt(rec.l2sq[0])
    return drift <= 1e-8, f"kappa=0 relative L2 drift {drift:.2e}"


def _effective_exact():
    fam = family_from_recipe(ISO_RECIPE)
    f = SpectralField.from_modes(2, 4, {(1, 0): -0.5j})
    rec = solve_effective(f, assemble_A(fam, 0.01, 4), SolverConfig(0.01, 4, 0.05, 0.25, check_stability=False))
    r = math.sqrt(np.sum(np.abs(rec.snapshots[-1]) ** 2) / np.sum(np.abs(f.coeffs) ** 2))
    err = abs(r - math.exp(-0.51))
    return err <= 1e-13, f"||Tbar_1||/||T_0|| - e^(-0.51) = {err:.2e}"


def _diagnostic_identities():
    fam = zero_family(2)
    rng = np.random.default_rng(6)
    f = random_field(2, 4, rng)
    path = OuPath.from_values(10.0, 0.005, np.zeros(201))
    cfg = SolverConfig(0.0, 4, 0.01, 0.1, check_stability=False)
    rec = solve_advection_diffusion(f, fam, path, cfg)
    me = mixing_error(rec, rec)
    A = assemble_A(fam, 0.0, 4)
    phi = random_field(2, 4, rng)
    dh = discrete_holder_functional(rec, A, phi)
    ok = me.sup_error == 0 and me.holder_error == 0 and abs(dh) <= 1e-12
    return ok, f"mixing_error(T, T) = {me.holder_error:g}; zero-velocity functional {dh:.2e}"


def _ou_covariance_mc(n_paths: int = 10_000):
    worst = 0.0
    for alpha in (10.0, 100.0):
        dt = 0.2 / alpha
        lags = np.array([0, 1, 2, 5, 10])
        vals, _ = simulate_batch(alpha, dt, int(lags[-1]), 1, make_rng(31, int(alpha)), n_paths)
        x = vals[:, :, 0]
        for lag in lags:
            prod = x[:, 0] * x[:, lag]
            z = abs(prod.mean() - alpha / 2 * math.exp(-alpha * lag * dt)) / (prod.std(ddof=1) / math.sqrt(n_paths))
            worst = max(worst, z)
    return worst <= 4.0, f"max |z| of covariance at 5 lags, alpha in (10, 100): {worst:.2f} (band 4)"


def _corrector_mc(n_bridges: int = 20_000):
    worst = 0.0
    for alpha in (10.0, 100.0):
        for delta in (0.01, 0.1):
            nsub = 64
            dt = delta / nsub
            e0 = np.array([0.8, -0.5]) * math.sqrt(alpha / 2)
            _, S = simulate_batch(alpha, dt, nsub, 2, make_rng(32, int(alpha * 1000 + delta * 100)), n_bridges,
                                  eta0=e0)
            for j, jp in ((0, 0), (0, 1)):
                c = iterated_integral_from_integrals(S[:, :, j], S[:, :, jp])
                ref = conditional_mean_c(e0[j], e0[jp], alpha, delta, j == jp)
                z = abs(c.mean() - ref) / (c.std(ddof=1) / math.sqrt(n_bridges))
                worst = max(worst, z)
    return worst <= 4.0, f"max |z| of conditioned c means over (alpha, delta) grid: {worst:.2f} (band 4)"


def _unconditional_c(n: int = 10_000):
    alpha, delta = 200.0, 0.05
    dt = delta / 100
    _, S = simulate_batch(alpha, dt, 100, 1, make_rng(33), n)
    c = iterated_integral_from_integrals(S[:, :, 0], S[:, :, 0])
    ref = unconditional_mean_c(alpha, delta, True)
    z = abs(c.mean() - ref) / (c.std(ddof=1) / math.sqrt(n))
    return z <= 4.0, f"stationary E c_jj z = {z:.2f} (band 4)"


FAST_CHECKS = [
    ("spectral_core", "hermitian_scan", None),
    ("spectral_core", "dealiased_product_oracle", _product_oracle),
    ("spectral_core", "interpolation_inequality", _interpolation),
    ("spectral_core", "projection_bound", _projection_bound),
    ("velocity_model", "isotropic_eddy_diffusivity", _eddy_isotropic),
    ("ou_process", "analytic_identities", _ou_identities),
    ("pde_solvers", "heat_single_mode", _heat_exact),
    ("pde_solvers", "kappa0_conservation", _kappa0_conservation),
    ("pde_solvers", "effective_isotropic_exact", _effective_exact),
    ("diagnostics", "degenerate_identities", _diagnostic_identities),
]
FULL_CHECKS = [
    ("ou_process", "covariance_mc", _ou_covariance_mc),
    ("ou_process", "corrector_mc", _corrector_mc),
    ("ou_process", "stationary_corrector_mc", _unconditional_c),
]


def validate(level: str = "fast", inject_fault: str | None = None) -> list[CheckResult]:
    """Run the validation suite; ``inject_fault="hermitian"`` corrupts one
    coefficient of the Hermitian scan (negative control)."""
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    if inject_fault is not None and inject_fault not in FAULTS:
        raise ValueError(f"unknown fault {inject_fault!r}")
    checks = FAST_CHECKS + (FULL_CHECKS if level == "full" else [])
    out = []
    for module, name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = _hermitian_scan(inject_fault) if fn is None else fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"raised {exc!r}"
        out.append(CheckResult(module, name, bool(ok), detail, time.perf_counter() - t0))
    return out


def format_table(results) -> str:
    lines = [f"{'module':<16}{'check':<30}{'result':<8}{'sec':>7}  detail"]
    for r in results:
        lines.append(f"{r.module:<16}{r.name:<30}{'PASS' if r.passed else 'FAIL':<8}{r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)


__all__ = ["validate", "CheckResult", "format_table", "FAULTS"]
