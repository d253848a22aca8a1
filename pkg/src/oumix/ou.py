"""Stationary Ornstein-Uhlenbeck drivers.

Each of the ``J`` independent processes solves
``d eta = -alpha eta dt + alpha dW`` with stationary law ``N(0, alpha/2)`` and
covariance ``(alpha/2) exp(-alpha |t-s|)``.  Paths are generated with the
exact Gaussian transition; the Brownian increment is drawn jointly with the
stochastic convolution so that every substep carries its own exact
time integral ``int eta dt = dW - d(eta)/alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import lfilter

MAX_ALPHA_DT = 0.2


def make_rng(master_seed: int, member: int = 0) -> np.random.Generator:
    """Per-member stream: ``SeedSequence(master_seed, spawn_key=(member,))``.

    The stream depends only on the master seed and the member index, never
    on worker count or scheduling.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(member),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class OuConfig:
    """Parameters of one OU driver family.

    ``alpha * dt_sub <= 0.2`` is enforced unless ``strict=False``.
    """

    alpha: float
    J: int
    dt_sub: float
    horizon: float = 1.0
    seed: int = 0
    strict: bool = True

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if not self.dt_sub > 0:
            raise ValueError("dt_sub must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.strict and self.alpha * self.dt_sub > MAX_ALPHA_DT * (1 + 1e-12):
            raise ValueError(f"alpha*dt_sub = {self.alpha * self.dt_sub:.4g} exceeds {MAX_ALPHA_DT} "
                             "(the correlation time must be resolved)")

    @property
    def n_steps(self) -> int:
        n = self.horizon / self.dt_sub
        m = int(round(n))
        if abs(n - m) > 1e-8 * max(n, 1):
            raise ValueError(f"horizon {self.horizon} is not an integer multiple of dt_sub {self.dt_sub}")
        return m


@dataclass(frozen=True, eq=False)
class OuPath:
    """One realisation of the ``J`` drivers on a uniform substep grid.

    Attributes
    ----------
    alpha, dt : float
    values : array ``(n+1, J)``
        ``eta(t_i)`` at ``t_i = i dt``.
    dW : array ``(n, J)``
        Brownian increments over every substep.
    integrals : array ``(n, J)``
        Exact ``int_{t_i}^{t_{i+1}} eta dt``.
    """

    alpha: float
    dt: float
    values: np.ndarray
    dW: np.ndarray
    integrals: np.ndarray

    def __post_init__(self):
        for name in ("values", "dW", "integrals"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        n = self.values.shape[0] - 1
        if self.dW.shape != (n, self.J) or self.integrals.shape != (n, self.J):
            raise ValueError("inconsistent OU path arrays")

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t) -> np.ndarray:
        """Grid indices of times ``t``; raises unless every ``t`` is a
        grid point."""
        x = np.asarray(t, dtype=float) / self.dt
        i = np.rint(x).astype(int)
        if np.any(np.abs(x - i) > 1e-6) or np.any(i < 0) or np.any(i > self.n_steps):
            raise ValueError("requested times are not on the OU substep grid (no interpolation is done)")
        return i

    def sample(self, t) -> np.ndarray:
        """Exact values at grid times ``t`` (shape ``t.shape + (J,)``)."""
        return self.values[self.index_of(t)]

    @classmethod
    def from_values(cls, alpha: float, dt: float, values) -> "OuPath":
        """Wrap an injected path; integrals use the trapezoid rule and the
        increments are chosen to satisfy the SDE relation exactly."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        integ = 0.5 * dt * (v[1:] + v[:-1])
        dW = integ + np.diff(v, axis=0) / alpha
        return cls(float(alpha), float(dt), v, dW, integ)


def sample_initial(cfg: OuConfig, rng: np.random.Generator, size=None) -> np.ndarray:
    """Stationary draws ``eta(0) ~ N(0, alpha/2)``, shape ``size + (J,)``."""
    shape = (cfg.J,) if size is None else tuple(np.atleast_1d(size)) + (cfg.J,)
    return rng.standard_normal(shape) * np.sqrt(cfg.alpha / 2)


def transition_moments(alpha: float, h: float) -> tuple[float, np.ndarray]:
    """Decay factor and covariance of ``(Z1, dW)`` with
    ``Z1 = int e^{-alpha(t+h-s)} dW_s`` over one step of length ``h``."""
    rho = np.exp(-alpha * h)
    v1 = -np.expm1(-2 * alpha * h) / (2 * alpha)
    c12 = -np.expm1(-alpha * h) / alpha
    return float(rho), np.array([[v1, c12], [c12, h]])


def _cholesky2(cov: np.ndarray) -> np.ndarray:
    a = np.sqrt(cov[0, 0])
    if a == 0:
        return np.zeros((2, 2))
    b = cov[0, 1] / a
    c = np.sqrt(max(cov[1, 1] - b * b, 0.0))
    return np.array([[a, 0.0], [b, c]])


def exact_step(eta, alpha: float, dt: float, xi) -> np.ndarray:
    """``eta(t+dt) = e^{-alpha dt} eta(t) + sqrt(alpha/2 (1 - e^{-2 alpha dt})) xi``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    rho = np.exp(-alpha * dt)
    return rho * np.asarray(eta) + np.sqrt(-np.expm1(-2 * alpha * dt) * alpha / 2) * np.asarray(xi)


def exact_step_joint(eta, alpha: float, dt: float, xi) -> tuple[np.ndarray, np.ndarray]:
    """Exact step plus the consistent Brownian increment.

    ``xi`` has a trailing axis of length 2 holding independent standard
    normals; returns ``(eta_next, dW)``.
    """
    xi = np.asarray(xi)
    rho, cov = transition_moments(alpha, dt)
    L = _cholesky2(cov)
    z1 = L[0, 0] * xi[..., 0]
    dW = L[1, 0] * xi[..., 0] + L[1, 1] * xi[..., 1]
    return rho * np.asarray(eta) + alpha * z1, dW


def simulate_path(cfg: OuConfig, rng: np.random.Generator, eta0=None) -> OuPath:
    """Simulate one path on ``[0, horizon]`` with step ``dt_sub``.

    Draw order: ``eta(0)`` (J normals, skipped if ``eta0`` is given), then
    an ``(n, J, 2)`` block of normals for the joint transitions.
    """
    n = cfg.n_steps
    e0 = sample_initial(cfg, rng) if eta0 is None else np.broadcast_to(np.asarray(eta0, float), (cfg.J,))
    xi = rng.standard_normal((n, cfg.J, 2))
    return _assemble_path(cfg.alpha, cfg.dt_sub, e0, xi)


def simulate_paths(cfg: OuConfig, rng: np.random.Generator, count: int, eta0=None) -> list[OuPath]:
    return [simulate_path(cfg, rng, eta0) for _ in range(count)]


def _assemble_path(alpha: float, dt: float, eta0: np.ndarray, xi: np.ndarray) -> OuPath:
    rho, cov = transition_moments(alpha, dt)
    L = _cholesky2(cov)
    z1 = L[0, 0] * xi[..., 0]
    dW = L[1, 0] * xi[..., 0] + L[1, 1] * xi[..., 1]
    vals = np.empty((xi.shape[0] + 1, xi.shape[1]))
    vals[0] = eta0
    if xi.shape[0]:
        vals[1:] = lfilter([1.0], [1.0, -rho], alpha * z1, axis=0, zi=rho * eta0[None, :])[0]
    integ = dW - np.diff(vals, axis=0) / alpha
    return OuPath(float(alpha), float(dt), vals, dW, integ)


def simulate_batch(alpha: float, dt: float, n: int, J: int, rng: np.random.Generator,
                   count: int, eta0=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ensemble of ``count`` paths from one stream.

    Returns ``(values (count, n+1, J), integrals (count, n, J))``; used by
    statistical checks where per-member streams are not required.
    """
    if eta0 is None:
        e0 = rng.standard_normal((count, J)) * np.sqrt(alpha / 2)
    else:
        e0 = np.broadcast_to(np.asarray(eta0, float), (count, J)).copy()
    xi = rng.standard_normal((count, n, J, 2))
    rho, cov = transition_moments(alpha, dt)
    L = _cholesky2(cov)
    z1 = L[0, 0] * xi[..., 0]
    dW = L[1, 0] * xi[..., 0] + L[1, 1] * xi[..., 1]
    vals = np.empty((count, n + 1, J))
    vals[:, 0] = e0
    vals[:, 1:] = lfilter([1.0], [1.0, -rho], alpha * z1, axis=1, zi=rho * e0[:, None, :])[0]
    integ = dW - np.diff(vals, axis=1) / alpha
    return vals, integ


def _interval_slice(path_dt: float, n_total: int, k: int, delta: float) -> slice:
    a = k * delta / path_dt
    b = (k + 1) * delta / path_dt
    ia, ib = int(round(a)), int(round(b))
    if abs(a - ia) > 1e-6 or abs(b - ib) > 1e-6:
        raise ValueError("the substep grid must refine the interval [k delta, (k+1) delta]")
    if k < 0 or ib > n_total:
        raise ValueError(f"interval [{k * delta}, {(k + 1) * delta}] lies outside the path horizon")
    return slice(ia, ib)


def iterated_integral_from_integrals(S_j: np.ndarray, S_jp: np.ndarray) -> np.ndarray:
    """``int int_{r<s} eta_j(s) eta_j'(r) dr ds`` from substep integrals
    (last axis = substeps).

    The inner integral ``I(s)`` is accumulated exactly at grid points; the
    outer integral pairs each substep integral of ``eta_j`` with the
    trapezoid average of ``I`` over that substep.  For ``j = j'`` this is
    exactly ``(int eta)^2 / 2``.
    """
    I = np.cumsum(S_jp, axis=-1)
    I_prev = I - S_jp
    return np.sum(S_j * 0.5 * (I + I_prev), axis=-1)


def iterated_integral_c(path: OuPath, j: int, jp: int, k: int, delta: float) -> float:
    """``c_{j,j'}(k) = int_{k delta}^{(k+1) delta} int_{k delta}^s eta_j(s) eta_j'(r) dr ds``."""
    sl = _interval_slice(path.dt, path.n_steps, k, delta)
    return float(iterated_integral_from_integrals(path.integrals[sl, j], path.integrals[sl, jp]))


def quadrature_error_scale(alpha: float, dt_sub: float, delta: float) -> float:
    """Size ``dt_sub^2 alpha^2 delta`` of the quadrature error of
    :func:`iterated_integral_c` (relative to the typical ``eta^2`` level)."""
    return float(dt_sub**2 * alpha**2 * delta)


def conditional_mean_c(eta_j: float, eta_jp: float, alpha: float, delta: float, same: bool) -> float:
    """Closed-form ``E[c_{j,j'}(k) | F_{k delta}]`` given the states at
    ``k delta``.

    ``eta_j eta_j' (1 - e^{-alpha delta})^2 / (2 alpha^2)`` plus, when
    ``j = j'``, ``delta/2 + (e^{-alpha delta} - 1 + (1 - e^{-2 alpha delta})/4) / alpha``.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    em = -np.expm1(-alpha * delta)
    val = eta_j * eta_jp * em**2 / (2 * alpha**2)
    if same:
        val += delta / 2 + (-em + 0.25 * (-np.expm1(-2 * alpha * delta))) / alpha
    return float(val)


def unconditional_mean_c(alpha: float, delta: float, same: bool) -> float:
    """Stationary ``E[c_{j,j'}(k)]``: the double integral of the covariance
    ``(alpha/2) e^{-alpha(s-r)}`` over the triangle, which is
    ``delta/2 - (1 - e^{-alpha delta}) / (2 alpha)`` for ``j = j'``."""
    if not same:
        return 0.0
    return float(delta / 2 + np.expm1(-alpha * delta) / (2 * alpha))


@dataclass(frozen=True)
class SupMomentTable:
    alphas: np.ndarray
    p: float
    means: np.ndarray
    stderr: np.ndarray
    reference: np.ndarray
    slope: float


def sup_moment_scaling(alphas, p: float, ensemble: int, seed: int = 0,
                       alpha_dt: float = MAX_ALPHA_DT, chunk: int = 256) -> SupMomentTable:
    """Monte Carlo ``E[sup_{[0,1]} |eta|^p]`` per ``alpha`` and the fitted
    log-log slope against ``alpha^{p/2} log^{p/2}(1 + alpha)``.

    The sup is taken over the substep grid ``dt = alpha_dt / alpha``.
    """
    alphas = np.asarray(alphas, dtype=float)
    if ensemble < 2:
        raise ValueError("ensemble must be >= 2")
    means, ses = [], []
    for i, a in enumerate(alphas):
        n = int(np.ceil(a / alpha_dt))
        dt = 1.0 / n
        rng = make_rng(seed, i)
        vals = []
        left = ensemble
        while left > 0:
            m = min(chunk, left)
            v, _ = simulate_batch(a, dt, n, 1, rng, m)
            vals.append(np.max(np.abs(v[..., 0]), axis=1) ** p)
            left -= m
        x = np.concatenate(vals)
        means.append(x.mean())
        ses.append(x.std(ddof=1) / np.sqrt(x.size))
    means = np.array(means)
    ref = (alphas * np.log1p(alphas)) ** (p / 2)
    if p == 0 or len(alphas) < 2:
        slope = float("nan") if p != 0 else 0.0
    else:
        slope = float(np.polyfit(np.log(ref), np.log(means), 1)[0])
    return SupMomentTable(alphas, float(p), means, np.array(ses), ref, slope)


class FrozenPath:
    """Smooth deterministic driver: cubic spline through the knots of an
    OU path.

    Used for convergence-order measurements, where the time-stepper must
    see a driver that is smooth in time.
    """

    def __init__(self, path: OuPath, knot_stride: int = 1):
        idx = np.arange(0, path.n_steps + 1, knot_stride)
        if idx[-1] != path.n_steps:
            raise ValueError("knot stride must divide the number of substeps")
        self.alpha = path.alpha
        self.J = path.J
        self.horizon = path.horizon
        self._spline = CubicSpline(path.times[idx], path.values[idx], axis=0, bc_type="not-a-knot")

    def sample(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.horizon + 1e-12):
            raise ValueError("requested times outside the driver horizon")
        return self._spline(t)

    def integral(self, a: float, b: float) -> np.ndarray:
        return self._spline.integrate(a, b)
