"""Pseudo-spectral time integration of the random and effective equations.

The random equation ``dT/dt + u(t).grad T = kappa Delta T`` with
``u(t, x) = sum_j eta_j(t) u_j(x)`` is integrated by integrating-factor
(Lawson) RK4: diffusion is solved exactly mode by mode and the Galerkin
advection term ``P_N(u.grad T)`` is evaluated exactly, so for ``kappa = 0`` the
discrete flow conserves ``||T||_{L^2}`` up to the RK4 truncation error.

Driver values at the RK4 stage times are taken from the driver path itself
(its substep must divide ``dt/2``); nothing is interpolated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .ou import MAX_ALPHA_DT
from .spectral import (
    SpectralField,
    coeffs_to_grid,
    fft_size,
    from_half,
    grid_to_coeffs,
    half_multiplicity,
    sobolev_weights,
    to_half,
    wavenumber_sq,
    wavenumbers,
)
from ._kernels import shift_conv_half_2d, shift_conv_half_3d
from .velocity import GeneratorA, VelocityFamily, eddy_coeffs, isotropy_matrix

BLOWUP = 1e12
CFL_NUMBER = 0.5
SPARSE_ROUTE_MAX_MODES = 24


def sup_eta_bound(alpha: float, ensemble: int) -> float:
    """``4 sqrt(alpha/2 * log(ensemble))`` with the logarithm floored at 1."""
    return 4.0 * np.sqrt(alpha / 2 * max(np.log(max(ensemble, 1)), 1.0))


def stability_limit(fam: VelocityFamily, N: int, alpha: float, ensemble: int = 1) -> float:
    """Largest admissible ``dt = min{0.5 / (N V_max), 0.2 / alpha}`` with
    ``V_max = sum_j ||u_j||_inf * sup_eta_bound``."""
    vmax = float(np.sum(fam.sup_norms())) * sup_eta_bound(alpha, ensemble)
    lim = MAX_ALPHA_DT / alpha
    if vmax > 0:
        lim = min(lim, CFL_NUMBER / (N * vmax))
    return float(lim)


def choose_dt(dt_max: float, delta_snap: float) -> float:
    """Largest ``dt <= dt_max`` dividing ``delta_snap``."""
    m = int(np.ceil(delta_snap / dt_max * (1 - 1e-12)))
    return delta_snap / max(m, 1)


def snapshot_delta(alpha: float, c1: float = 4.0, c2: float = 0.9, horizon: float = 1.0) -> float:
    """``delta = c1 alpha^{-c2}`` rounded so that ``1/delta`` is an integer
    (the nearest one, at least 1) that also makes ``horizon / delta`` an
    integer."""
    raw = c1 * alpha ** (-c2)
    n0 = max(int(round(1.0 / raw)), 1)
    for n in sorted(range(max(n0 - 200, 1), n0 + 201), key=lambda m: (abs(m - n0), m)):
        if abs(horizon * n - round(horizon * n)) < 1e-9 and round(horizon * n) >= 1:
            return 1.0 / n
    raise ValueError(f"no admissible snapshot spacing near {raw:.4g} for horizon {horizon}")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    ``delta_snap`` must be an integer multiple of ``dt`` and divide
    ``horizon``.  ``ensemble_size`` enters the stability rule.
    """

    kappa: float
    N: int
    dt: float
    delta_snap: float
    horizon: float = 1.0
    ensemble_size: int = 1
    route: str = "auto"
    keep_steps: bool = False
    check_stability: bool = True

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not (self.dt > 0 and self.delta_snap > 0 and self.horizon > 0):
            raise ValueError("dt, delta_snap and horizon must be positive")
        _ratio(self.delta_snap, self.dt, "delta_snap / dt")
        _ratio(self.horizon, self.delta_snap, "horizon / delta_snap")
        if self.route not in ("auto", "sparse", "fft"):
            raise ValueError(f"unknown route {self.route!r}")

    @property
    def n_steps(self) -> int:
        return _ratio(self.horizon, self.dt, "horizon / dt")

    @property
    def snap_stride(self) -> int:
        return _ratio(self.delta_snap, self.dt, "delta_snap / dt")

    @property
    def n_snaps(self) -> int:
        return _ratio(self.horizon, self.delta_snap, "horizon / delta_snap")


def _ratio(a: float, b: float, what: str) -> int:
    r = a / b
    m = int(round(r))
    if m < 1 or abs(r - m) > 1e-8 * max(r, 1.0):
        raise ValueError(f"{what} = {r:.10g} must be a positive integer")
    return m


class TransportOperator:
    """Galerkin advection ``P_N (u . grad T)`` for ``u = sum_j eta_j u_j``.

    Two exact routes: ``sparse`` shifts the coefficient array once per
    support mode of the family; ``fft`` multiplies on a grid of
    ``M >= 2N + K + 1`` points, the smallest size that keeps the band
    ``N + K`` of the product from aliasing into the retained box.
    """

    def __init__(self, fam: VelocityFamily, N: int, route: str = "auto"):
        self.fam = fam
        self.d = fam.d
        self.N = int(N)
        self.K = fam.K
        sup = fam.support
        if route == "auto":
            route = "sparse" if len(sup) <= SPARSE_ROUTE_MAX_MODES else "fft"
        self.route = route
        self.kv = wavenumbers(self.d, self.N)
        self.norm = (2 * np.pi) ** (-self.d / 2)
        q_in = [q for q in sup if np.all(np.abs(q) <= 2 * self.N)]
        self.q = np.array(q_in, dtype=int).reshape(-1, self.d)
        self.uq = np.stack([fam.coeffs[(slice(None), slice(None)) + tuple(q + self.K)] for q in self.q], axis=-1) \
            if len(self.q) else np.zeros((fam.J, self.d, 0), complex)
        self._slices = [self._shift_slices(q) for q in self.q]
        if self.route == "fft":
            self.M = fft_size(2 * self.N + self.K + 1)
            self.U = fam.grid(self.M)

    def _shift_slices(self, q):
        N = self.N
        dst, src = [], []
        for qi in q:
            lo, hi = max(-N, qi - N), min(N, qi + N)
            dst.append(slice(lo + N, hi + N + 1))
            src.append(slice(lo - qi + N, hi - qi + N + 1))
        return (Ellipsis,) + tuple(dst), (Ellipsis,) + tuple(src)

    def velocity_modes(self, eta: np.ndarray) -> np.ndarray:
        """``sum_j eta_j u_hat_{j,i,q}``: shape ``(E, d, Q)``; the sum runs
        over ``j`` in a fixed order."""
        eta = np.atleast_2d(eta)
        W = np.zeros((eta.shape[0], self.d, self.uq.shape[-1]), complex)
        for j in range(self.fam.J):
            W += eta[:, j, None, None] * self.uq[j][None]
        return W

    def apply(self, eta: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Coefficients of ``P_N(u.grad T)`` for states ``c`` of shape
        ``(E,) + box`` and driver values ``eta`` of shape ``(E, J)``."""
        if self.route == "sparse":
            return self._apply_sparse(eta, c)
        return self._apply_fft(eta, c)

    def _apply_sparse(self, eta, c):
        d = self.d
        W = self.velocity_modes(eta) * self.norm
        G = [1j * self.kv[i] * c for i in range(d)]
        out = np.zeros_like(c)
        bshape = (c.shape[0],) + (1,) * d
        for qi, (dst, src) in enumerate(self._slices):
            acc = W[:, 0, qi].reshape(bshape) * G[0][src]
            for i in range(1, d):
                acc += W[:, i, qi].reshape(bshape) * G[i][src]
            out[dst] += acc
        return out

    def _apply_fft(self, eta, c):
        d, M = self.d, self.M
        eta = np.atleast_2d(eta)
        u = np.zeros((c.shape[0], d) + (M,) * d)
        for j in range(self.fam.J):
            u += eta[:, j].reshape((-1, 1) + (1,) * d) * self.U[j][None]
        prod = np.zeros((c.shape[0],) + (M,) * d)
        for i in range(d):
            prod += u[:, i] * coeffs_to_grid(1j * self.kv[i] * c, d, M)
        return grid_to_coeffs(prod, d, self.N)


@dataclass(eq=False)
class TrajectoryRecord:
    """Output of one solve.

    ``snapshots[n]`` holds the coefficients at ``n * delta``; the energy
    series (squared ``L^2``, ``H^1``, ``H^{-1}`` norms) live on the step grid.
    """

    kappa: float
    alpha: float
    dt: float
    delta: float
    snap_times: np.ndarray
    snapshots: np.ndarray
    step_times: np.ndarray
    l2sq: np.ndarray
    h1sq: np.ndarray
    hm1sq: np.ndarray
    blowup: bool = False
    cfl_margin: float = float("inf")
    tail_fraction: float = 0.0
    steps: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.snapshots.ndim - 1

    @property
    def N(self) -> int:
        return self.snapshots.shape[-1] // 2

    def snapshot(self, n: int) -> SpectralField:
        return SpectralField(self.snapshots[n])

    def l2(self) -> np.ndarray:
        return np.sqrt(self.l2sq)

    def to_csv(self, path) -> None:
        """Columns ``t, l2, h1, hm1`` on the step grid."""
        arr = np.column_stack([self.step_times, np.sqrt(self.l2sq), np.sqrt(self.h1sq), np.sqrt(self.hm1sq)])
        np.savetxt(path, arr, delimiter=",", header="t,l2,h1,hm1", comments="", fmt="%.17g")

    def dump_snapshots(self, path) -> None:
        np.savez(path, times=self.snap_times, snapshots=self.snapshots)


class HalfTransport:
    """:class:`TransportOperator` acting on half-spectrum states.

    ``sparse`` uses the compiled shift-convolution kernel; ``fft`` uses real
    transforms on the ``M >= 2N + K + 1`` grid.  Both give the exact
    Galerkin term.
    """

    def __init__(self, fam: VelocityFamily, N: int, route: str = "auto"):
        self.fam = fam
        self.d = d = fam.d
        self.N = int(N)
        self.K = fam.K
        sup = np.array([q for q in fam.support if np.all(np.abs(q) <= 2 * self.N)], dtype=np.int64).reshape(-1, d)
        if route == "auto":
            route = "sparse" if len(sup) <= SPARSE_ROUTE_MAX_MODES else "fft"
        if route not in ("sparse", "fft"):
            raise ValueError(f"unknown route {route!r}")
        self.route = route
        self.q = sup
        norm = (2 * np.pi) ** (-d / 2)
        self.uq = norm * np.stack([fam.coeffs[(slice(None), slice(None)) + tuple(q + self.K)] for q in sup], axis=-1) \
            if len(sup) else np.zeros((fam.J, d, 0), complex)
        if route == "fft":
            self.M = M = fft_size(2 * self.N + self.K + 1)
            self.U = fam.grid(M)
            k = np.arange(-self.N, self.N + 1)
            self._idx = tuple(np.ix_(*([k % M] * (d - 1) + [np.arange(self.N + 1)])))
            kv = wavenumbers(d, self.N)
            self._ik = [1j * g[..., self.N:] for g in kv]

    def velocity_modes(self, eta: np.ndarray) -> np.ndarray:
        eta = np.atleast_2d(eta)
        W = np.zeros((eta.shape[0], self.d, self.uq.shape[-1]), complex)
        for j in range(self.fam.J):
            W += eta[:, j, None, None] * self.uq[j][None]
        return W

    def apply(self, eta: np.ndarray, h: np.ndarray) -> np.ndarray:
        if self.route == "sparse":
            out = np.zeros_like(h)
            kern = shift_conv_half_2d if self.d == 2 else shift_conv_half_3d
            if len(self.q):
                kern(h, self.velocity_modes(eta), self.q, self.N, out)
            return out
        d, M = self.d, self.M
        eta = np.atleast_2d(eta)
        E = h.shape[0]
        axes = tuple(range(1, d + 1))
        spec_shape = (E,) + (M,) * (d - 1) + (M // 2 + 1,)
        prod = np.zeros((E,) + (M,) * d)
        for i in range(d):
            F = np.zeros(spec_shape, complex)
            F[(slice(None),) + self._idx] = self._ik[i] * h
            gi = sfft.irfftn(F, s=(M,) * d, axes=axes, norm="forward")
            ui = np.zeros((E,) + (M,) * d)
            for j in range(self.fam.J):
                ui += eta[:, j].reshape((-1,) + (1,) * d) * self.U[j, i][None]
            prod += ui * gi
        G = sfft.rfftn(prod, axes=axes, norm="forward")
        return G[(slice(None),) + self._idx]


def _driver_alpha(path) -> float:
    return float(getattr(path, "alpha", 0.0))


def _driver_stage_values(path, cfg: SolverConfig) -> np.ndarray:
    """Driver at ``t_n`` and ``t_n + dt/2``: shape ``(2 n_steps + 1, J)``."""
    half = np.arange(2 * cfg.n_steps + 1) * (cfg.dt / 2)
    horizon = getattr(path, "horizon", None)
    if horizon is not None and horizon < cfg.horizon * (1 - 1e-12):
        raise ValueError(f"driver horizon {horizon} does not cover the solve horizon {cfg.horizon}")
    return np.asarray(path.sample(half), dtype=float)


def _norm_weights(d: int, N: int):
    return sobolev_weights(d, N, 1.0), sobolev_weights(d, N, -1.0)


def _half_norm_matrix(d: int, N: int) -> np.ndarray:
    """Columns: weights for ``||.||^2`` in ``L^2``, ``H^1``, ``H^{-1}`` on
    the half spectrum."""
    mult = half_multiplicity(d, N)
    w0 = sobolev_weights(d, N, 0.0)[..., N:]
    w1 = sobolev_weights(d, N, 1.0)[..., N:]
    wm = sobolev_weights(d, N, -1.0)[..., N:]
    return np.stack([(mult * w).ravel() for w in (w0, w1, wm)], axis=1)


def _tail_mask(d: int, N: int) -> np.ndarray:
    return wavenumber_sq(d, N) > (N / 2) ** 2 + 1e-9


def solve_ensemble(T0, fam: VelocityFamily, paths, cfg: SolverConfig, kappas=None,
                   meta: list[dict] | None = None) -> list[TrajectoryRecord]:
    """Integrate a batch of members at once.

    Parameters
    ----------
    T0 : SpectralField or array ``(E,) + box``
        Initial data (broadcast to every member when a single field).
    paths : sequence of drivers
        One driver per member (``OuPath`` or any object with ``sample``).
    kappas : sequence of float, optional
        Per-member diffusivity; defaults to ``cfg.kappa``.
    """
    paths = list(paths)
    E = len(paths)
    if E == 0:
        raise ValueError("at least one driver is required")
    d, N = fam.d, cfg.N
    if isinstance(T0, SpectralField):
        if T0.d != d or T0.N != N:
            raise ValueError(f"initial field (d={T0.d}, N={T0.N}) does not match solver (d={d}, N={N})")
        c_full = np.broadcast_to(T0.coeffs, (E,) + T0.coeffs.shape)
    else:
        c_full = np.asarray(T0, dtype=complex)
        if c_full.shape != (E,) + (2 * N + 1,) * d:
            raise ValueError("initial coefficient batch has the wrong shape")
    kap = np.full(E, cfg.kappa) if kappas is None else np.asarray(kappas, dtype=float)
    if kap.shape != (E,) or np.any(kap < 0) or np.any(kap > 1):
        raise ValueError("kappas must be one value in [0, 1] per member")
    alphas = [_driver_alpha(p) for p in paths]
    limits = [stability_limit(fam, N, a, cfg.ensemble_size) if a > 0 else np.inf for a in alphas]
    margin = min(limits) / cfg.dt
    if cfg.check_stability and margin < 1 - 1e-9:
        raise ValueError(f"time step {cfg.dt:.4g} violates the stability rule (limit {min(limits):.4g})")
    eta = np.stack([_driver_stage_values(p, cfg) for p in paths])  # (E, 2n+1, J)
    if eta.shape[-1] != fam.J:
        raise ValueError(f"driver has {eta.shape[-1]} components, family has {fam.J}")

    op = HalfTransport(fam, N, cfg.route)
    c = to_half(c_full, d).copy()
    k2 = wavenumber_sq(d, N)[..., N:]
    bshape = (E,) + (1,) * d
    h = cfg.dt
    Eh = np.exp(-kap.reshape(bshape) * k2[None] * (h / 2))
    E2 = Eh * Eh
    Wn = _half_norm_matrix(d, N)
    n = cfg.n_steps
    stride = cfg.snap_stride
    snaps = np.empty((cfg.n_snaps + 1, E) + (2 * N + 1,) * d, complex)
    snaps[0] = c_full
    norms = np.empty((n + 1, E, 3))
    steps = np.empty((n + 1, E) + (2 * N + 1,) * d, complex) if cfg.keep_steps else None
    blown = np.zeros(E, bool)
    tail = _tail_mask(d, N)
    tail_frac = np.zeros(E)
    axes = tuple(range(1, d + 1))

    def record(i, c):
        a2 = (c.real**2 + c.imag**2).reshape(E, -1)
        norms[i] = a2 @ Wn
        if steps is not None:
            steps[i] = from_half(c, d)

    record(0, c)
    for m in range(n):
        e0, e1, e2 = eta[:, 2 * m], eta[:, 2 * m + 1], eta[:, 2 * m + 2]
        ka = op.apply(e0, c)
        ka *= -1
        kb = op.apply(e1, Eh * (c + (h / 2) * ka))
        kb *= -1
        Ec = Eh * c
        kc = op.apply(e1, Ec + (h / 2) * kb)
        kc *= -1
        kd = op.apply(e2, Eh * (Ec + h * kc))
        kd *= -1
        c = E2 * c + (h / 6) * (E2 * ka + 2 * Eh * (kb + kc) + kd)
        record(m + 1, c)
        l2 = norms[m + 1, :, 0]
        bad = ~np.isfinite(l2) | (l2 > BLOWUP**2)
        if np.any(bad & ~blown):
            for e in np.nonzero(bad & ~blown)[0]:
                if not np.all(np.isfinite(c[e])) or np.max(np.abs(c[e])) > BLOWUP:
                    blown[e] = True
            c[blown] = 0.0
        if (m + 1) % stride == 0:
            full = from_half(c, d)
            snaps[(m + 1) // stride] = full
            a2 = np.abs(full) ** 2
            tot = a2.sum(axis=axes)
            frac = np.sqrt((a2 * tail).sum(axis=axes) / np.where(tot > 0, tot, 1.0))
            tail_frac = np.maximum(tail_frac, np.where(tot > 0, frac, 0.0))

    snap_times = np.arange(cfg.n_snaps + 1) * cfg.delta_snap
    step_times = np.arange(n + 1) * h
    out = []
    for e in range(E):
        out.append(TrajectoryRecord(
            kappa=float(kap[e]), alpha=alphas[e], dt=h, delta=cfg.delta_snap,
            snap_times=snap_times, snapshots=snaps[:, e].copy(), step_times=step_times,
            l2sq=norms[:, e, 0].copy(), h1sq=norms[:, e, 1].copy(), hm1sq=norms[:, e, 2].copy(),
            blowup=bool(blown[e]), cfl_margin=float(margin), tail_fraction=float(tail_frac[e]),
            steps=None if steps is None else steps[:, e].copy(),
            meta=dict(meta[e]) if meta else {"route": op.route}))
    return out


def solve_advection_diffusion(T0: SpectralField, fam: VelocityFamily, path, cfg: SolverConfig) -> TrajectoryRecord:
    """Pathwise solve of ``dT/dt + u.grad T = kappa Delta T`` for one driver."""
    return solve_ensemble(T0, fam, [path], cfg)[0]


def _symbol_bound(fam: VelocityFamily) -> float:
    """``sup_x`` of the largest eigenvalue of ``a(x)/2``: bounds the
    symbol of ``-L`` by ``rho |k|^2``."""
    from .velocity import linf_grid_size

    M = linf_grid_size(2 * fam.K)
    g = fam.grid(M).reshape(fam.J, fam.d, -1)
    a = np.einsum("jiX,jlX->Xil", g, g)
    return float(np.max(np.linalg.eigvalsh(a))) / 2 if a.size else 0.0


def solve_effective(T0: SpectralField, A: GeneratorA, cfg: SolverConfig) -> TrajectoryRecord:
    """Effective solution ``e^{tA} T0``.

    Isotropic families (``L = kappa_bar Delta``) use the exact diagonal
    exponential; otherwise integrating-factor RK4 with ``L - kappa_bar Delta``
    explicit and the step refined so the explicit part stays stable.
    """
    d, N = A.d, A.N
    if T0.d != d or T0.N != N or cfg.N != N:
        raise ValueError("initial field, generator and solver cutoffs must agree")
    k2 = wavenumber_sq(d, N)
    iso = isotropy_matrix(A.family)
    rate = A.kappa + iso.kappa_bar
    c0 = T0.coeffs
    n = cfg.n_steps
    stride = cfg.snap_stride
    step_times = np.arange(n + 1) * cfg.dt
    snap_times = np.arange(cfg.n_snaps + 1) * cfg.delta_snap
    tshape = (-1,) + (1,) * d
    steps = None
    if iso.isotropic:
        snaps = np.exp(-rate * k2[None] * snap_times.reshape(tshape)) * c0[None]
        # energy series grouped by |k|^2 shells
        e0 = np.abs(c0.ravel()) ** 2
        shells, inv = np.unique(k2.ravel(), return_inverse=True)
        energy = np.bincount(inv, weights=e0)
        keep = (shells > 0) & (energy > 0)
        shells, energy = shells[keep], energy[keep]
        decay = np.exp(-2 * rate * np.outer(step_times, shells))
        l2 = decay @ energy
        h1 = decay @ (energy * shells)
        hm1 = decay @ (energy / shells)
        if cfg.keep_steps:
            steps = np.exp(-rate * k2[None] * step_times.reshape(tshape)) * c0[None]
        method = "exact"
    else:
        rho = _symbol_bound(A.family)
        excess = max(rho - iso.kappa_bar, iso.kappa_bar, 1e-300)
        sub = max(1, int(np.ceil(cfg.dt * excess * d * N * N / 2.5)))
        h = cfg.dt / sub
        Eh = np.exp(-rate * k2 * (h / 2))
        E2 = Eh * Eh
        w1, wm1 = _norm_weights(d, N)

        def rhs(x):
            return eddy_coeffs(A.family, x) + iso.kappa_bar * k2 * x

        snaps = np.empty((cfg.n_snaps + 1,) + c0.shape, complex)
        l2, h1, hm1 = (np.empty(n + 1) for _ in range(3))
        if cfg.keep_steps:
            steps = np.empty((n + 1,) + c0.shape, complex)
        c = c0.copy()
        for m in range(n + 1):
            if m > 0:
                for _ in range(sub):
                    ka = rhs(c)
                    kb = rhs(Eh * (c + (h / 2) * ka))
                    kc = rhs(Eh * c + (h / 2) * kb)
                    kd = rhs(E2 * c + h * (Eh * kc))
                    c = E2 * c + (h / 6) * (E2 * ka + 2 * Eh * (kb + kc) + kd)
            a2 = np.abs(c) ** 2
            l2[m], h1[m], hm1[m] = a2.sum(), (a2 * w1).sum(), (a2 * wm1).sum()
            if m % stride == 0:
                snaps[m // stride] = c
            if steps is not None:
                steps[m] = c
        method = f"if-rk4x{sub}"
    return TrajectoryRecord(
        kappa=A.kappa, alpha=float("inf"), dt=cfg.dt, delta=cfg.delta_snap, snap_times=snap_times,
        snapshots=snaps, step_times=step_times, l2sq=l2, h1sq=h1, hm1sq=hm1,
        steps=steps, meta={"method": method, "kappa_bar": iso.kappa_bar})


def effective_at(T0: SpectralField, A: GeneratorA, times) -> np.ndarray:
    """Exact ``e^{tA} T0`` coefficient arrays for an isotropic generator."""
    iso = isotropy_matrix(A.family)
    if not iso.isotropic:
        raise ValueError("exact effective evolution requires an isotropic family")
    k2 = wavenumber_sq(A.d, A.N)
    t = np.asarray(times, float).reshape((-1,) + (1,) * A.d)
    return np.exp(-(A.kappa + iso.kappa_bar) * k2[None] * t) * T0.coeffs[None]


def energy_equality_residual(rec: TrajectoryRecord) -> float:
    """``int_0^T |d/dt ||T||^2 + 2 kappa ||T||_{H^1}^2| dt`` from the step
    series: per step, the change of ``||T||^2`` plus the trapezoid
    dissipation."""
    dE = np.diff(rec.l2sq)
    diss = 2 * rec.kappa * rec.dt * 0.5 * (rec.h1sq[1:] + rec.h1sq[:-1])
    return float(np.sum(np.abs(dE + diss)))


def energy_estimate_excess(rec: TrajectoryRecord) -> float:
    """``sup_t (||T_t||^2 + 2 kappa int_0^t ||T||_{H^1}^2) / ||T_0||^2 - 1``."""
    diss = np.concatenate([[0.0], np.cumsum(rec.kappa * rec.dt * (rec.h1sq[1:] + rec.h1sq[:-1]))])
    return float(np.max(rec.l2sq + diss) / rec.l2sq[0] - 1.0)


def _quadrature_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` intervals (trapezoid if odd)."""
    w = np.full(n + 1, h)
    if n % 2 == 0 and n >= 2:
        w[1:-1:2] = 4 * h / 3
        w[2:-1:2] = 2 * h / 3
        w[0] = w[-1] = h / 3
    else:
        w[0] = w[-1] = h / 2
    return w


def weak_form_residual(rec: TrajectoryRecord, fam: VelocityFamily, path, phi: SpectralField,
                       sample_times) -> np.ndarray:
    """Residuals of the weak formulation at ``sample_times`` (``s = 0``):
    ``<phi, T_t> - <phi, T_0> - int_0^t <u(r).grad phi, T_r> + kappa <Delta phi, T_r> dr``.

    The time integral uses composite Simpson on the stored step grid
    (trapezoid when the interval count is odd).  Requires ``keep_steps``.
    """
    if rec.steps is None:
        raise ValueError("weak_form_residual needs a record solved with keep_steps=True")
    N, d = rec.N, rec.d
    if phi.d != d or phi.N > N:
        raise ValueError("test function must lie within the solver cutoff")
    from .spectral import resize

    ph = resize(phi.coeffs, d, N)
    k2 = wavenumber_sq(d, N)
    op = TransportOperator(fam, N)
    eta = np.asarray(path.sample(rec.step_times), float)
    adv = op.apply(eta, np.broadcast_to(ph, rec.steps.shape).copy())
    lap = -k2 * ph
    ax = tuple(range(1, d + 1))
    g = np.real(np.sum(adv * np.conj(rec.steps), axis=ax)) + rec.kappa * np.real(np.sum(lap * np.conj(rec.steps), axis=ax))
    proj = np.real(np.sum(ph * np.conj(rec.steps), axis=ax))
    out = []
    for t in np.atleast_1d(sample_times):
        i = int(round(t / rec.dt))
        if abs(i * rec.dt - t) > 1e-9 or not 0 <= i < len(rec.step_times):
            raise ValueError(f"sample time {t} is not on the step grid")
        integral = float(np.dot(_quadrature_weights(i, rec.dt), g[: i + 1])) if i > 0 else 0.0
        out.append(proj[i] - proj[0] - integral)
    return np.array(out)


__all__ = [
    "SolverConfig", "TrajectoryRecord", "TransportOperator", "HalfTransport", "stability_limit", "choose_dt",
    "snapshot_delta", "sup_eta_bound", "solve_ensemble", "solve_advection_diffusion", "solve_effective",
    "effective_at", "energy_equality_residual", "energy_estimate_excess", "weak_form_residual",
]
