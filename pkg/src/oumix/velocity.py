"""Divergence-free velocity families and the operators they induce.

A family ``{u_j}`` of ``J`` stationary vector fields on ``T^d`` is stored as a
coefficient array of shape ``(J, d) + (2K+1,) * d`` on the box of cutoff ``K``.
From it we derive the Gram matrix and ``epsilon``, the size parameter ``mu``,
the eddy-diffusivity operator ``L f = 1/2 sum_j u_j . grad(u_j . grad f)``, the
generator ``A = kappa Delta + L`` and its principal eigenvalue.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, lobpcg

from .spectral import (
    SpectralField,
    coeffs_to_grid,
    fft_size,
    grid_to_coeffs,
    hermitian_defect,
    mirror,
    random_field,
    sobolev_weights,
    wavenumber_sq,
    wavenumbers,
)

DIV_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative method hit its iteration cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class VelocityFamily:
    """Finite family of divergence-free vector fields.

    Parameters
    ----------
    coeffs : complex array, shape ``(J, d) + (2K+1,) * d``
        Fourier coefficients of every component of every field.
    recipe : dict
        Free-form description of how the family was built.
    """

    coeffs: np.ndarray
    recipe: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim < 4:
            raise ValueError("coefficient array must have shape (J, d, box...)")
        J, d = c.shape[:2]
        if J == 0:
            raise ValueError("velocity family must contain at least one field")
        if d not in (2, 3) or c.ndim != 2 + d:
            raise ValueError(f"inconsistent family shape {c.shape}")
        K = c.shape[-1] // 2
        centre = (slice(None), slice(None)) + (K,) * d
        scale = float(np.max(np.abs(c)))
        if scale > 0:
            if np.max(np.abs(c[centre])) > 1e-12 * scale:
                raise ValueError("velocity components must be zero-mean")
            if hermitian_defect(c, d) > 1e-10:
                raise ValueError("velocity components must be real (Hermitian coefficients)")
            kv = wavenumbers(d, K)
            div = sum(kv[i] * c[:, i] for i in range(d))
            if np.max(np.abs(div)) > DIV_TOL * scale * max(K, 1):
                raise ValueError("velocity fields are not divergence-free")
        c[centre] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "recipe", dict(self.recipe))

    @property
    def J(self) -> int:
        return self.coeffs.shape[0]

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    @property
    def K(self) -> int:
        return self.coeffs.shape[-1] // 2

    def field(self, j: int) -> list[SpectralField]:
        """Component fields of ``u_j``."""
        return [SpectralField(self.coeffs[j, i]) for i in range(self.d)]

    def scaled(self, a: float) -> "VelocityFamily":
        rec = dict(self.recipe)
        rec["scale"] = rec.get("scale", 1.0) * float(a)
        return VelocityFamily(self.coeffs * float(a), rec)

    def grid(self, M: int) -> np.ndarray:
        """Real samples of every component on the ``M^d`` grid,
        shape ``(J, d) + (M,) * d``."""
        return _grid_cache(self, int(M))

    @cached_property
    def support(self) -> np.ndarray:
        """Wavevectors (rows) where some coefficient is nonzero."""
        nz = np.any(np.abs(self.coeffs) > 0, axis=(0, 1))
        return np.argwhere(nz) - self.K

    def sup_norms(self, M: int | None = None) -> np.ndarray:
        """``||u_j||_{L^inf}`` (Euclidean length) on a grid of 4x the
        Nyquist density of the family's band."""
        M = M or linf_grid_size(self.K)
        g = self.grid(M)
        mag = np.sqrt(np.sum(g**2, axis=1))
        return mag.reshape(self.J, -1).max(axis=1)


_GRID_CACHE: dict = {}


def _grid_cache(fam: VelocityFamily, M: int) -> np.ndarray:
    key = (id(fam), M)
    hit = _GRID_CACHE.get(key)
    if hit is not None and hit[0] is fam:
        return hit[1]
    g = coeffs_to_grid(fam.coeffs, fam.d, M)
    g.setflags(write=False)
    if len(_GRID_CACHE) > 32:
        _GRID_CACHE.clear()
    _GRID_CACHE[key] = (fam, g)
    return g


def linf_grid_size(K: int) -> int:
    """Sampling grid used for sup norms: 4x the Nyquist count ``2K+1``."""
    return max(4 * (2 * K + 1), 16)


def shell_modes(d: int, radius_sq: int | list[int]) -> list[tuple[int, ...]]:
    """Half-space representatives ``k`` (first nonzero component positive)
    of all lattice points with ``|k|^2`` in ``radius_sq``."""
    rs = {int(radius_sq)} if np.isscalar(radius_sq) else {int(r) for r in radius_sq}
    if any(r <= 0 for r in rs):
        raise ValueError("shell radii must be positive")
    R = int(np.ceil(np.sqrt(max(rs))))
    out = []
    for k in itertools.product(range(-R, R + 1), repeat=d):
        if sum(x * x for x in k) in rs and _is_positive(k):
            out.append(tuple(k))
    return sorted(out, key=lambda k: (sum(x * x for x in k), k))


def _is_positive(k) -> bool:
    for x in k:
        if x != 0:
            return x > 0
    return False


def orthonormal_polarizations(k) -> np.ndarray:
    """``d-1`` orthonormal vectors spanning ``k^perp`` (rows), built by
    Gram-Schmidt from the standard basis."""
    k = np.asarray(k, dtype=float)
    d = k.size
    basis = [k / np.linalg.norm(k)]
    out = []
    for e in np.eye(d):
        v = e.copy()
        for b in basis:
            v -= (v @ b) * b
        n = np.linalg.norm(v)
        if n > 1e-8:
            v /= n
            basis.append(v)
            out.append(v)
        if len(out) == d - 1:
            break
    return np.array(out)


def _trig_coeffs(d: int, K: int, k, sigma, phase: str) -> np.ndarray:
    """Coefficients of ``sigma * cos(k.x)`` or ``sigma * sin(k.x)``."""
    c = np.zeros((d,) + (2 * K + 1,) * d, dtype=complex)
    pos = tuple(int(x) + K for x in k)
    neg = tuple(-int(x) + K for x in k)
    amp = (2 * np.pi) ** (d / 2) / 2
    if phase == "cos":
        vp, vn = amp, amp
    elif phase == "sin":
        vp, vn = amp / 1j, -amp / 1j
    else:
        raise ValueError(f"phase must be 'cos' or 'sin', got {phase!r}")
    for i in range(d):
        c[(i,) + pos] += sigma[i] * vp
        c[(i,) + neg] += sigma[i] * vn
    return c


def build_trig_family(d: int, mode_set, amplitude: float, pattern: str = "isotropic_pairs",
                      polarizations=None, phase: str = "cos",
                      n_polarizations: int | None = None) -> VelocityFamily:
    """Trigonometric divergence-free family.

    Parameters
    ----------
    d : int
        Dimension (2 or 3).
    mode_set : sequence of wavevectors
        ``k`` and ``-k`` describe the same fields; duplicates are merged.
    amplitude : float
        Common amplitude ``a``.
    pattern : {"single", "isotropic_pairs"}
        ``single`` gives one field ``a sigma_k cos(k.x)`` (or ``sin`` with
        ``phase="sin"``) per mode; ``sigma_k`` comes from ``polarizations``
        (one vector per mode) or defaults to the first orthonormal vector of
        ``k^perp``.  ``isotropic_pairs`` gives, for each mode, ``d-1``
        orthonormal polarizations (or ``n_polarizations`` of them) times both
        ``sin`` and ``cos``, so that ``sum_j u_j u_j^t`` is constant in space.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    modes = [tuple(int(x) for x in k) for k in mode_set]
    if not modes:
        raise ValueError("mode_set must be nonempty")
    if not np.isfinite(amplitude):
        raise ValueError("amplitude must be finite")
    for k in modes:
        if len(k) != d:
            raise ValueError(f"wavevector {k} is not {d}-dimensional")
        if all(x == 0 for x in k):
            raise ValueError("k = 0 is not allowed in mode_set (fields are zero-mean)")
    if n_polarizations is not None and not 1 <= n_polarizations <= d - 1:
        raise ValueError(f"at most d-1 = {d - 1} polarizations exist per mode, requested {n_polarizations}")
    reps = []
    for i, k in enumerate(modes):
        r = k if _is_positive(k) else tuple(-x for x in k)
        if r not in [x[0] for x in reps]:
            reps.append((r, i))
    K = max(max(abs(x) for x in k) for k, _ in reps)
    fields = []
    desc = []
    if pattern == "single":
        for k, i in reps:
            if polarizations is not None:
                sigma = np.asarray(polarizations[i], dtype=float)
                if abs(sigma @ np.asarray(k, float)) > 1e-12 * np.linalg.norm(sigma):
                    raise ValueError(f"polarization {sigma} not orthogonal to k={k}")
            else:
                sigma = orthonormal_polarizations(k)[0]
            fields.append(amplitude * _trig_coeffs(d, K, k, sigma, phase))
            desc.append({"k": list(k), "sigma": sigma.tolist(), "phase": phase})
    elif pattern == "isotropic_pairs":
        npol = d - 1 if n_polarizations is None else n_polarizations
        for k, _ in reps:
            for sigma in orthonormal_polarizations(k)[:npol]:
                for ph in ("cos", "sin"):
                    fields.append(amplitude * _trig_coeffs(d, K, k, sigma, ph))
                    desc.append({"k": list(k), "sigma": sigma.tolist(), "phase": ph})
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    recipe = {"kind": "trig", "d": d, "pattern": pattern, "amplitude": float(amplitude),
              "modes": [list(k) for k, _ in reps], "fields": desc}
    return VelocityFamily(np.array(fields), recipe)


def zero_family(d: int, K: int = 1, J: int = 1) -> VelocityFamily:
    """Family of ``J`` identically vanishing fields."""
    return VelocityFamily(np.zeros((J, d) + (2 * K + 1,) * d, dtype=complex), {"kind": "zero", "d": d})


def gram(fam: VelocityFamily) -> np.ndarray:
    """``G_{jj'} = <u_j, u_j'>_{L^2}`` (symmetric positive semidefinite)."""
    c = fam.coeffs.reshape(fam.J, -1)
    G = np.real(c @ np.conj(c).T)
    return 0.5 * (G + G.T)


def epsilon(fam: VelocityFamily) -> float:
    """Square root of the largest Gram eigenvalue: the supremum of
    ``(sum_j <u_j, v>^2)^{1/2}`` over unit vector fields ``v``."""
    w = np.linalg.eigvalsh(gram(fam))
    return float(np.sqrt(max(w[-1], 0.0)))


def vector_sobolev_norm(c: np.ndarray, d: int, s: float) -> float:
    """``H^s`` norm of a vector field from its ``(d, box)`` coefficients."""
    K = c.shape[-1] // 2
    return float(np.sqrt(np.sum(sobolev_weights(d, K, s) * np.abs(c) ** 2)))


@dataclass(frozen=True)
class IsotropyReport:
    mean: np.ndarray
    deviation: float
    kappa_bar: float
    isotropic: bool
    grid_size: int


def isotropy_matrix(fam: VelocityFamily, M: int | None = None) -> IsotropyReport:
    """Spatial mean of ``a(x) = sum_j u_j u_j^t`` and its max deviation.

    The family is flagged isotropic when ``a`` is constant within 1e-8 and
    its mean equals ``2 kappa_bar I`` with ``kappa_bar = tr(mean) / (2d)``.
    """
    d = fam.d
    M = M or linf_grid_size(2 * fam.K)
    g = fam.grid(M)
    a = np.einsum("jiX,jlX->ilX", g.reshape(fam.J, d, -1), g.reshape(fam.J, d, -1))
    mean = a.mean(axis=-1)
    dev = float(np.max(np.abs(a - mean[..., None]))) if a.size else 0.0
    kbar = float(np.trace(mean) / (2 * d))
    iso = dev < 1e-8 and float(np.max(np.abs(mean - 2 * kbar * np.eye(d)))) < 1e-8
    return IsotropyReport(mean, dev, kbar, bool(iso), M)


def scalar_eddy_grid(N: int, K: int) -> int:
    """Grid size making ``P_N L P_N`` exact for a band-``K`` family."""
    return fft_size(2 * N + 2 * K + 1)


def _grid_wavenumbers(d: int, M: int) -> list[np.ndarray]:
    f = sfft.fftfreq(M, 1.0 / M)
    out = []
    for i in range(d):
        shape = [1] * d
        shape[i] = M
        out.append(f.reshape(shape))
    return out


def eddy_coeffs(fam: VelocityFamily, c: np.ndarray) -> np.ndarray:
    """``P_N L`` applied to coefficient arrays of cutoff ``N`` (leading
    batch axes allowed).  Both products are formed exactly: the grid holds
    the band ``N + 2K`` without aliasing into the retained box."""
    d = fam.d
    N = c.shape[-1] // 2
    M = scalar_eddy_grid(N, fam.K)
    U = fam.grid(M)
    kv = wavenumbers(d, N)
    grads = [coeffs_to_grid(1j * kv[i] * c, d, M) for i in range(d)]
    kg = _grid_wavenumbers(d, M)
    axes = tuple(range(-d, 0))
    total = np.zeros(c.shape[:-d] + (M,) * d)
    for j in range(fam.J):
        g = sum(U[j, i] * grads[i] for i in range(d))
        G = sfft.fftn(g, axes=axes)
        for i in range(d):
            dg = sfft.ifftn(1j * kg[i] * G, axes=axes).real
            total += U[j, i] * dg
    return 0.5 * grid_to_coeffs(total, d, N)


def apply_eddy_diffusivity(fam: VelocityFamily, f: SpectralField) -> SpectralField:
    """``P_N (1/2) sum_j u_j . grad(u_j . grad f)`` at the cutoff of ``f``."""
    if fam.d != f.d:
        raise ValueError(f"dimension mismatch: family d={fam.d}, field d={f.d}")
    return SpectralField(eddy_coeffs(fam, f.coeffs))


@dataclass(frozen=True, eq=False)
class GeneratorA:
    """``A = kappa Delta + L`` on the zero-mean space of cutoff ``N``."""

    family: VelocityFamily
    kappa: float
    N: int

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.N < 1:
            raise ValueError("cutoff N must be >= 1")

    @property
    def d(self) -> int:
        return self.family.d

    @cached_property
    def isotropy(self) -> IsotropyReport:
        return isotropy_matrix(self.family)

    def apply_coeffs(self, c: np.ndarray) -> np.ndarray:
        k2 = wavenumber_sq(self.d, self.N)
        return -self.kappa * k2 * c + eddy_coeffs(self.family, c)

    def diagonal(self) -> np.ndarray:
        """Cheap diagonal surrogate ``-(kappa + kappa_bar)|k|^2``."""
        return -(self.kappa + self.isotropy.kappa_bar) * wavenumber_sq(self.d, self.N)


def assemble_A(fam: VelocityFamily, kappa: float, N: int) -> GeneratorA:
    return GeneratorA(fam, float(kappa), int(N))


def apply_A(A: GeneratorA, f: SpectralField) -> SpectralField:
    if f.N != A.N or f.d != A.d:
        raise ValueError(f"field (d={f.d}, N={f.N}) does not match generator (d={A.d}, N={A.N})")
    return SpectralField(A.apply_coeffs(f.coeffs))


def _real_inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.real(np.vdot(b, a)))


def _start_vector(d: int, N: int, seed: int = 12345) -> np.ndarray:
    c = random_field(d, N, np.random.default_rng(seed)).coeffs.copy()
    return c / np.sqrt(_real_inner(c, c))


def principal_eigenvalue(A: GeneratorA, tol: float = 1e-8, maxiter: int = 500) -> float:
    """Smallest eigenvalue of ``-A`` on the truncated zero-mean space.

    Block preconditioned conjugate-gradient eigensolver (LOBPCG) on the
    real coordinates ``(Re c, Im c)`` of the coefficient array, with a
    diagonal preconditioner.  A block of several vectors is iterated so
    that nearly degenerate low eigenvalues do not slow convergence.

    Raises
    ------
    ConvergenceError
        If the eigensolver does not reach relative residual ``sqrt(tol)``
        (which bounds the quotient error by about ``tol``) or if ``-A`` is
        numerically singular.
    """
    d, N = A.d, A.N
    shape = (2 * N + 1,) * d
    n = int(np.prod(shape))
    centre = np.ravel_multi_index((N,) * d, shape)

    diag = -A.diagonal().ravel()
    diag[centre] = 1.0
    diag = np.where(diag > 0, diag, 1.0)
    # The operator acts on real fields only, so it is real-linear; the
    # non-Hermitian complement is given a large eigenvalue so that it never
    # competes with the spectrum of interest.
    big = 10.0 * float(diag.max()) + 1.0

    def hermitian_part(v):
        return 0.5 * (v + mirror(v))

    def matvec(R):
        R = np.asarray(R, dtype=float)
        one = R.ndim == 1
        R = R.reshape(2 * n, -1)
        out = np.empty_like(R)
        for j in range(R.shape[1]):
            v = (R[:n, j] + 1j * R[n:, j]).reshape(shape)
            h = hermitian_part(v)
            w = (-A.apply_coeffs(h) + big * (v - h)).ravel()
            w[centre] = big * v.ravel()[centre]
            out[:n, j], out[n:, j] = w.real, w.imag
        return out[:, 0] if one else out

    dd = np.concatenate([diag, diag])

    def precond(R):
        R = np.asarray(R, dtype=float)
        return R / (dd[:, None] if R.ndim == 2 else dd)

    op = LinearOperator((2 * n, 2 * n), matvec=matvec, matmat=matvec, dtype=float)
    pre = LinearOperator((2 * n, 2 * n), matvec=precond, matmat=precond, dtype=float)
    m = int(min(6, max(1, (n - 1) // 2)))
    rng = np.random.default_rng(12345)
    X = np.empty((2 * n, m))
    for j in range(m):
        c = random_field(d, N, rng).coeffs.ravel()
        X[:, j] = np.concatenate([c.real, c.imag])
    if 2 * n <= 5 * m:
        M = matvec(np.eye(2 * n))
        lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        res = 0.0
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals, vecs = lobpcg(op, X, M=pre, tol=1e-2 * np.sqrt(tol), maxiter=maxiter, largest=False)
        lam = float(vals[0])
        v = vecs[:, 0]
        res = float(np.linalg.norm(matvec(v) - lam * v) / max(abs(lam), 1e-300) / np.linalg.norm(v))
        if res > np.sqrt(tol):
            raise ConvergenceError("eigensolver did not converge", res)
    if lam <= 1e-10 * float(diag.max()):
        raise ConvergenceError("-A is numerically singular on the zero-mean space", res)
    return lam


def eddy_operator_norm(fam: VelocityFamily, N: int, tol: float = 1e-8,
                       maxiter: int = 10_000) -> float:
    """``sup ||L f||_{L^2} / ||f||_{H^2}`` over the cutoff-``N`` zero-mean
    space, by power iteration on ``M^* M`` with ``M = L (-Delta)^{-1}``."""
    d = fam.d
    inv = sobolev_weights(d, N, -1.0)
    x = _start_vector(d, N, seed=2024)
    val_prev = -1.0
    for _ in range(maxiter):
        y = eddy_coeffs(fam, inv * x)
        z = inv * eddy_coeffs(fam, y)
        val = np.sqrt(max(_real_inner(y, y), 0.0))
        nz = np.sqrt(_real_inner(z, z))
        if nz == 0.0:
            return 0.0
        x = z / nz
        if abs(val - val_prev) <= tol * max(val, 1e-300):
            return float(val)
        val_prev = val
    raise ConvergenceError("power iteration for the eddy-diffusivity norm hit its cap",
                           abs(val - val_prev))


@dataclass(frozen=True)
class MuReport:
    value: float
    sobolev_term: float
    linf_term: float
    operator_term: float
    gamma: float
    sobolev_index: float
    linf_grid: int
    operator_cutoff: int
    effective_dim: int
    flag_le_one: bool


def gamma_bound(d_eff: int) -> float:
    return (d_eff - 2) / 6.0


def mu(fam: VelocityFamily, gamma: float, N_norm_grid: int = 8) -> MuReport:
    """Size parameter ``max{J sum_j ||u_j||_{H^{d/2-gamma}}, J sum_j
    ||u_j||_{L^inf}, ||L||^{1/2}_{H^2 -> L^2}}``.

    Two-dimensional families are measured through their lift to ``T^3``
    (coefficient copy), so the Sobolev index is ``3/2 - gamma`` and the
    admissible range is ``gamma in (0, 1/6)``; the lift leaves the sup norm
    and the operator norm unchanged.
    """
    d_eff = 3
    bound = gamma_bound(d_eff)
    if not 0.0 < gamma < bound:
        raise ValueError(f"gamma must satisfy 0 < gamma < (d-2)/6 = {bound:.6g} for d={d_eff}, got {gamma}")
    s = d_eff / 2 - gamma
    J = fam.J
    sob = J * sum(vector_sobolev_norm(fam.coeffs[j], fam.d, s) for j in range(J))
    grid = linf_grid_size(fam.K)
    linf = J * float(np.sum(fam.sup_norms(grid)))
    opn = eddy_operator_norm(fam, N_norm_grid)
    op_term = float(np.sqrt(opn))
    val = max(sob, linf, op_term)
    return MuReport(val, sob, linf, op_term, float(gamma), s, grid, int(N_norm_grid), d_eff, bool(val <= 1.0))


def concat_families(*fams: VelocityFamily) -> VelocityFamily:
    """Union of families (padded to the largest cutoff)."""
    from .spectral import resize

    d = fams[0].d
    K = max(f.K for f in fams)
    parts = [resize(f.coeffs, d, K) for f in fams]
    return VelocityFamily(np.concatenate(parts, axis=0), {"kind": "union", "parts": [f.recipe for f in fams]})


def family_from_recipe(recipe: dict) -> VelocityFamily:
    """Build a trigonometric family from a config dictionary.

    Keys: ``d``, ``shells`` (list of ``{"radius_sq": r}`` or ``{"modes": [...]}``
    entries with ``amplitude`` and optional ``pattern``/``polarizations``).
    A shell may give ``kappa_bar`` instead of ``amplitude`` for isotropic
    patterns, which fixes ``a`` so that ``a(x) = 2 kappa_bar I``.
    """
    d = int(recipe["d"])
    parts = []
    for sh in recipe["shells"]:
        if "modes" in sh:
            modes = [tuple(k) for k in sh["modes"]]
        else:
            modes = shell_modes(d, sh["radius_sq"])
        pattern = sh.get("pattern", "isotropic_pairs")
        npol = sh.get("polarizations")
        if "kappa_bar" in sh:
            unit = build_trig_family(d, modes, 1.0, pattern, n_polarizations=npol)
            kb = isotropy_matrix(unit).kappa_bar
            amp = float(np.sqrt(sh["kappa_bar"] / kb))
        else:
            amp = float(sh["amplitude"])
        parts.append(build_trig_family(d, modes, amp, pattern, n_polarizations=npol))
    fam = parts[0] if len(parts) == 1 else concat_families(*parts)
    return VelocityFamily(fam.coeffs, {"kind": "recipe", **recipe})


__all__ = [
    "ConvergenceError", "VelocityFamily", "shell_modes", "orthonormal_polarizations",
    "build_trig_family", "zero_family", "gram", "epsilon", "mu", "MuReport", "isotropy_matrix",
    "IsotropyReport", "apply_eddy_diffusivity", "eddy_coeffs", "GeneratorA", "assemble_A",
    "apply_A", "principal_eigenvalue", "eddy_operator_norm", "concat_families",
    "family_from_recipe", "mirror",
]
