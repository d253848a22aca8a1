"""Fourier-side representation of zero-mean real fields on the torus.

Fields on ``T^d = R^d / 2 pi Z^d`` (``d`` in {2, 3}) are stored by their
coefficients in the orthonormal basis ``e_k(x) = (2 pi)^{-d/2} exp(i k.x)``
on the box ``max_i |k_i| <= N``.  The coefficient array has shape
``(2N+1,) * d`` and entry ``[k_1 + N, ..., k_d + N]`` holds ``f_hat_k``.

Real-valuedness is Hermitian symmetry ``f_hat_{-k} = conj(f_hat_k)``, and in
this layout ``-k`` is the reversed index, so the mirror image of an array is
``conj(c[::-1, ::-1, ...])``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft as sfft

HERMITIAN_RTOL = 1e-10


def _box_shape(d: int, N: int) -> tuple[int, ...]:
    return (2 * N + 1,) * d


@lru_cache(maxsize=64)
def wavenumbers(d: int, N: int) -> tuple[np.ndarray, ...]:
    """Integer wavevector components on the box, broadcast to full shape."""
    k = np.arange(-N, N + 1)
    grids = np.meshgrid(*([k] * d), indexing="ij")
    out = tuple(np.ascontiguousarray(g.astype(float)) for g in grids)
    for g in out:
        g.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def wavenumber_sq(d: int, N: int) -> np.ndarray:
    k2 = sum(g**2 for g in wavenumbers(d, N))
    k2.setflags(write=False)
    return k2


@lru_cache(maxsize=128)
def sobolev_weights(d: int, N: int, s: float) -> np.ndarray:
    """``|k|^{2s}`` on the box, with the zero mode weighted 0."""
    k2 = wavenumber_sq(d, N).copy()
    zero = k2 == 0
    k2[zero] = 1.0
    w = k2**s
    w[zero] = 0.0
    w.setflags(write=False)
    return w


def mirror(c: np.ndarray, d: int | None = None) -> np.ndarray:
    """``conj(c[-k])`` over the trailing ``d`` axes (all axes by default)."""
    d = c.ndim if d is None else d
    idx = (Ellipsis,) + (slice(None, None, -1),) * d
    return np.conj(c[idx])


def hermitian_defect(c: np.ndarray, d: int | None = None) -> float:
    """Largest ``|c_k - conj(c_{-k})|`` relative to ``max |c|`` (0 for 0)."""
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(c - mirror(c, d)))) / scale


def fft_size(n: int) -> int:
    """Smallest 5-smooth integer >= n."""
    return sfft.next_fast_len(int(n), real=True)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Zero-mean real scalar field held as Hermitian Fourier coefficients.

    Parameters
    ----------
    coeffs : complex array of shape ``(2N+1,) * d``
        Coefficients on the centred box.  The array is copied and frozen.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {c.ndim}")
        n0 = c.shape[0]
        if any(n != n0 for n in c.shape) or n0 % 2 == 0 or n0 < 3:
            raise ValueError(f"coefficient array must be (2N+1)^d with N >= 1, got {c.shape}")
        scale = float(np.max(np.abs(c)))
        centre = (n0 // 2,) * c.ndim
        if abs(c[centre]) > HERMITIAN_RTOL * max(scale, 1e-300):
            raise ValueError("zero mode must vanish (fields are zero-mean)")
        c[centre] = 0.0
        defect = hermitian_defect(c)
        if defect > HERMITIAN_RTOL:
            raise ValueError(f"coefficients are not Hermitian-symmetric (defect {defect:.3e})")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def d(self) -> int:
        return self.coeffs.ndim

    @property
    def N(self) -> int:
        return self.coeffs.shape[0] // 2

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return SpectralField(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return SpectralField(self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "SpectralField":
        return SpectralField(self.coeffs * float(a))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(-self.coeffs)

    def coefficient(self, k) -> complex:
        k = tuple(int(x) for x in k)
        if len(k) != self.d or any(abs(x) > self.N for x in k):
            return 0j
        return complex(self.coeffs[tuple(x + self.N for x in k)])

    @classmethod
    def zeros(cls, d: int, N: int) -> "SpectralField":
        return cls(np.zeros(_box_shape(d, N), dtype=complex))

    @classmethod
    def from_modes(cls, d: int, N: int, modes: dict) -> "SpectralField":
        """Build from ``{k: f_hat_k}``; conjugate partners are filled in
        when absent and checked when present."""
        c = np.zeros(_box_shape(d, N), dtype=complex)
        for k, v in modes.items():
            k = tuple(int(x) for x in k)
            if len(k) != d:
                raise ValueError(f"wavevector {k} is not {d}-dimensional")
            if any(abs(x) > N for x in k):
                raise ValueError(f"wavevector {k} outside cutoff N={N}")
            c[tuple(x + N for x in k)] = v
            mk = tuple(-x + N for x in k)
            if (tuple(-x for x in k)) not in modes:
                c[mk] = np.conj(v)
        return cls(c)

    @classmethod
    def from_function(cls, d: int, N: int, func, M: int | None = None) -> "SpectralField":
        """Sample ``func(*x)`` on a uniform grid and transform it; the
        mean is removed."""
        M = M or fft_size(4 * N + 2)
        x = np.arange(M) * (2 * np.pi / M)
        xs = np.meshgrid(*([x] * d), indexing="ij")
        values = np.asarray(func(*xs), dtype=float)
        return forward(GridField(values - values.mean()), N)


def _check_compatible(f: SpectralField, g: SpectralField):
    if f.d != g.d or f.N != g.N:
        raise ValueError(f"incompatible fields: (d={f.d}, N={f.N}) vs (d={g.d}, N={g.N})")


def random_field(d: int, N: int, rng: np.random.Generator, decay: float = 0.0) -> SpectralField:
    """Random Hermitian field with complex Gaussian coefficients scaled by
    ``(1 + |k|^2)^{-decay/2}``."""
    shape = _box_shape(d, N)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c = 0.5 * (c + mirror(c))
    c *= (1.0 + wavenumber_sq(d, N)) ** (-decay / 2)
    c[(N,) * d] = 0.0
    return SpectralField(c)


@dataclass(frozen=True, eq=False)
class GridField:
    """Real samples of a zero-mean field on the uniform grid of ``M^d``
    points ``x_j = 2 pi j / M``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim not in (2, 3) or any(n != v.shape[0] for n in v.shape):
            raise ValueError(f"grid must be M^d with d in (2, 3), got {v.shape}")
        amp = float(np.max(np.abs(v))) if v.size else 0.0
        if abs(v.mean()) > 1e-12 * max(amp, 1e-300):
            raise ValueError("grid field must have zero mean")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def M(self) -> int:
        return self.values.shape[0]


def _fft_index(N: int, M: int) -> np.ndarray:
    return np.arange(-N, N + 1) % M


def coeffs_to_grid(c: np.ndarray, d: int, M: int) -> np.ndarray:
    """Evaluate coefficient arrays (leading batch axes allowed) on an
    ``M^d`` grid.  Returns real samples."""
    N = c.shape[-1] // 2
    if M < 2 * N + 1:
        raise ValueError(f"grid size M={M} too small for cutoff N={N} (need M >= {2 * N + 1})")
    batch = c.shape[:-d]
    F = np.zeros(batch + (M,) * d, dtype=complex)
    idx = np.ix_(*([_fft_index(N, M)] * d))
    F[(Ellipsis,) + idx] = c
    axes = tuple(range(-d, 0))
    vals = sfft.ifftn(F, axes=axes, norm="forward")
    return vals.real * (2 * np.pi) ** (-d / 2)


def grid_to_coeffs(values: np.ndarray, d: int, N: int) -> np.ndarray:
    """Inverse of :func:`coeffs_to_grid`, truncated to cutoff ``N``.  The
    zero mode is dropped and the result symmetrised."""
    M = values.shape[-1]
    if M < 2 * N + 1:
        raise ValueError(f"grid size M={M} too small for cutoff N={N} (need M >= {2 * N + 1})")
    axes = tuple(range(-d, 0))
    F = sfft.fftn(values, axes=axes, norm="forward")
    idx = np.ix_(*([_fft_index(N, M)] * d))
    c = F[(Ellipsis,) + idx] * (2 * np.pi) ** (d / 2)
    c = 0.5 * (c + mirror(c, d))
    c[(Ellipsis,) + (N,) * d] = 0.0
    return c


def to_grid(f: SpectralField, M: int | None = None) -> GridField:
    """Evaluate ``f`` on the uniform ``M^d`` grid (default ``2N+2``)."""
    M = 2 * f.N + 2 if M is None else int(M)
    vals = coeffs_to_grid(f.coeffs, f.d, M)
    return GridField(vals - vals.mean())


def forward(g: GridField, N: int) -> SpectralField:
    """Fourier coefficients of grid samples on the cutoff-``N`` box."""
    return SpectralField(grid_to_coeffs(g.values, g.d, N))


def inner(f: SpectralField, g: SpectralField, s: float = 0.0) -> float:
    """``<f, g>_{H^s} = sum |k|^{2s} f_k conj(g_k)`` (real for real fields)."""
    _check_compatible(f, g)
    w = sobolev_weights(f.d, f.N, float(s))
    return float(np.real(np.sum(w * f.coeffs * np.conj(g.coeffs))))


def sobolev_norm(f: SpectralField, s: float) -> float:
    """Homogeneous ``H^s`` norm ``(sum_{k != 0} |k|^{2s} |f_k|^2)^{1/2}``."""
    w = sobolev_weights(f.d, f.N, float(s))
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def gradient(f: SpectralField, i: int) -> SpectralField:
    """Partial derivative along axis ``i``."""
    return SpectralField(1j * wavenumbers(f.d, f.N)[i] * f.coeffs)


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(-wavenumber_sq(f.d, f.N) * f.coeffs)


def fractional_laplacian(f: SpectralField, s: float) -> SpectralField:
    """``(-Delta)^{s/2} f``, i.e. multiplier ``|k|^s``."""
    return SpectralField(sobolev_weights(f.d, f.N, s / 2.0) * f.coeffs)


def apply_derivative(f: SpectralField, kind: str, arg: float | int | None = None) -> SpectralField:
    """Dispatch on ``kind`` in {"gradient", "laplacian", "fractional_power"}.

    ``arg`` is the axis for ``gradient`` and the exponent ``s`` for
    ``fractional_power``.
    """
    if kind == "gradient":
        return gradient(f, int(arg))
    if kind == "laplacian":
        return laplacian(f)
    if kind == "fractional_power":
        return fractional_laplacian(f, float(arg))
    raise ValueError(f"unknown derivative kind {kind!r}")


def resize(c: np.ndarray, d: int, N_new: int) -> np.ndarray:
    """Zero-pad or truncate coefficient arrays (batch axes allowed) to the
    box of cutoff ``N_new``."""
    N = c.shape[-1] // 2
    batch = c.shape[:-d]
    if N_new == N:
        return c.copy()
    if N_new > N:
        out = np.zeros(batch + _box_shape(d, N_new), dtype=complex)
        sl = (Ellipsis,) + (slice(N_new - N, N_new + N + 1),) * d
        out[sl] = c
        return out
    sl = (Ellipsis,) + (slice(N - N_new, N + N_new + 1),) * d
    return c[sl].copy()


def pad(f: SpectralField, N_new: int) -> SpectralField:
    if N_new < f.N:
        raise ValueError("pad cannot shrink the cutoff; use truncate")
    return SpectralField(resize(f.coeffs, f.d, N_new))


def truncate(f: SpectralField, N_new: int) -> SpectralField:
    if N_new > f.N:
        raise ValueError("truncate cannot grow the cutoff; use pad")
    return SpectralField(resize(f.coeffs, f.d, N_new))


def product_grid_size(N: int) -> int:
    """Padded grid for exact quadratic products (3/2 rule: ``M >= 3N+1``)."""
    return fft_size(3 * N + 1)


def product_coeffs(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    """Dealiased product of coefficient arrays on the same box, truncated
    back to the box (zero mode dropped)."""
    N = a.shape[-1] // 2
    M = product_grid_size(N)
    ga = coeffs_to_grid(a, d, M)
    gb = coeffs_to_grid(b, d, M)
    return grid_to_coeffs(ga * gb, d, N)


def dealiased_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product ``fg`` projected onto the zero-mean, cutoff-``N``
    space.

    The product is formed on a ``3/2``-padded grid, so the retained
    coefficients are the exact convolution ``(2 pi)^{-d/2} sum_q f_q g_{k-q}``.
    """
    _check_compatible(f, g)
    return SpectralField(product_coeffs(f.coeffs, g.coeffs, f.d))


def project_modes(f: SpectralField, N_cut: float) -> SpectralField:
    """Keep modes with Euclidean ``|k| <= N_cut``."""
    if N_cut < 1:
        raise ValueError("N_cut must be >= 1")
    mask = wavenumber_sq(f.d, f.N) <= float(N_cut) ** 2 + 1e-9
    return SpectralField(np.where(mask, f.coeffs, 0.0))


def lift_2d_to_3d(f: SpectralField) -> SpectralField:
    """Embed a 2-d field as the ``k_3 = 0`` plane of a 3-d field.

    Coefficients are copied, so every ``H^s`` norm is preserved; in physical
    space the lift is ``f(x_1, x_2) / sqrt(2 pi)``.
    """
    if f.d != 2:
        raise ValueError("lift_2d_to_3d expects a 2-d field")
    N = f.N
    c = np.zeros(_box_shape(3, N), dtype=complex)
    c[:, :, N] = f.coeffs
    return SpectralField(c)


def shell_spectrum(c: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Energy per integer shell ``round(|k|)``; returns (shells, energy)."""
    N = c.shape[-1] // 2
    shell = np.rint(np.sqrt(wavenumber_sq(d, N))).astype(int).ravel()
    e = (np.abs(c) ** 2).reshape(c.shape[:-d] + (-1,))
    nshell = shell.max() + 1
    out = np.zeros(c.shape[:-d] + (nshell,))
    for n in range(1, nshell):
        out[..., n] = e[..., shell == n].sum(axis=-1)
    return np.arange(nshell), out


def save_field(f: SpectralField, prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.json`` ({d, N}) and ``<prefix>.csv`` rows
    ``k_1..k_d, re, im`` for every nonzero coefficient."""
    prefix = Path(prefix)
    header = prefix.with_suffix(".json")
    table = prefix.with_suffix(".csv")
    header.write_text(json.dumps({"d": f.d, "N": f.N}))
    N = f.N
    nz = np.argwhere(f.coeffs != 0)
    with table.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"k{i + 1}" for i in range(f.d)] + ["re", "im"])
        for idx in nz:
            v = f.coeffs[tuple(idx)]
            w.writerow([int(i) - N for i in idx] + [repr(float(v.real)), repr(float(v.imag))])
    return header, table


def load_field(prefix: str | Path) -> SpectralField:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    d, N = int(meta["d"]), int(meta["N"])
    c = np.zeros(_box_shape(d, N), dtype=complex)
    with prefix.with_suffix(".csv").open() as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            k = [int(x) for x in row[:d]]
            c[tuple(x + N for x in k)] = float(row[d]) + 1j * float(row[d + 1])
    return SpectralField(c)


def to_half(c: np.ndarray, d: int) -> np.ndarray:
    """Half-spectrum view (``k_d >= 0``) of full coefficient arrays."""
    N = c.shape[-1] // 2
    return np.ascontiguousarray(c[..., N:])


def from_half(h: np.ndarray, d: int) -> np.ndarray:
    """Rebuild full coefficient arrays from their half spectrum, filling
    ``k_d < 0`` by Hermitian symmetry (the ``k_d = 0`` plane is
    symmetrised)."""
    N = h.shape[-1] - 1
    out = np.empty(h.shape[:-1] + (2 * N + 1,), dtype=complex)
    out[..., N:] = h
    rev = (Ellipsis,) + (slice(None, None, -1),) * (d - 1)
    out[..., :N] = np.conj(h[rev + (slice(N, 0, -1),)])
    plane = out[..., N]
    out[..., N] = 0.5 * (plane + np.conj(plane[rev]))
    return out


@lru_cache(maxsize=64)
def half_multiplicity(d: int, N: int) -> np.ndarray:
    """Weights converting half-spectrum sums to full sums (1 on the
    ``k_d = 0`` plane, 2 elsewhere)."""
    w = np.full((2 * N + 1,) * (d - 1) + (N + 1,), 2.0)
    w[..., 0] = 1.0
    w.setflags(write=False)
    return w


def shell_random_field(d: int, N: int, rng: np.random.Generator, kmin: float = 1.0,
                       kmax: float = 2.0, norm: float = 1.0) -> SpectralField:
    """Equal-amplitude coefficients with random phases on all modes with
    ``kmin <= |k| <= kmax``, scaled to ``||f||_{L^2} = norm``."""
    k2 = wavenumber_sq(d, N)
    mask = (k2 >= kmin**2 - 1e-9) & (k2 <= kmax**2 + 1e-9)
    if not mask.any():
        raise ValueError("no lattice modes in the requested shell")
    phase = rng.uniform(0.0, 2 * np.pi, size=k2.shape)
    rev = (slice(None, None, -1),) * d
    phase = phase - phase[rev]  # odd in k, so c_{-k} = conj(c_k) with |c_k| = 1
    c = np.where(mask, np.exp(1j * phase), 0.0)
    c[(N,) * d] = 0.0
    c *= norm / np.sqrt(np.sum(np.abs(c) ** 2))
    return SpectralField(c)
