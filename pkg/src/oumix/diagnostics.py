"""Functionals of trajectories: mixing errors, Hoelder norms, the residual
process, the discretised Hoelder functional, dissipation-bound checks,
high-mode transfer and increment scaling.

All norms are the homogeneous Sobolev norms of :mod:`oumix.spectral`; the
time discretisation is always the snapshot grid of the records involved.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .solvers import TrajectoryRecord
from .spectral import SpectralField, resize, sobolev_weights, wavenumber_sq
from .velocity import GeneratorA

DEFAULT_THETA = 0.05
DEFAULT_S = 1.0
DEFAULT_BETA = 2.6


@dataclass(frozen=True)
class HolderParams:
    """Exponent ``theta`` in (0, 1) and negative Sobolev index ``s`` (norm
    ``H^{-s}``); ``beta_floor`` enforces ``s > d/2 + 1`` where required."""

    theta: float = DEFAULT_THETA
    s: float = DEFAULT_S
    beta_floor: float | None = None

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.beta_floor is not None and not self.s > self.beta_floor:
            raise ValueError(f"beta = {self.s} must exceed d/2 + 1 = {self.beta_floor}")


def _weighted_real(c: np.ndarray, d: int, s: float) -> np.ndarray:
    """Rows ``[Re, Im] * |k|^s`` so that Euclidean inner products of rows
    are ``H^s`` inner products."""
    N = c.shape[-1] // 2
    w = np.sqrt(sobolev_weights(d, N, s))
    x = (c * w).reshape(c.shape[0], -1)
    return np.concatenate([x.real, x.imag], axis=1)


def pairwise_distances(c: np.ndarray, d: int, s: float) -> np.ndarray:
    """``||c_n - c_m||_{H^s}`` for all snapshot pairs via a Gram matrix."""
    X = _weighted_real(c, d, s)
    G = X @ X.T
    diag = np.diag(G)
    D2 = diag[:, None] + diag[None, :] - 2 * G
    return np.sqrt(np.maximum(D2, 0.0))


def norms(c: np.ndarray, d: int, s: float) -> np.ndarray:
    N = c.shape[-1] // 2
    w = sobolev_weights(d, N, s)
    ax = tuple(range(1, d + 1))
    return np.sqrt(np.sum(w * np.abs(c) ** 2, axis=ax))


def holder_seminorm(c: np.ndarray, times: np.ndarray, d: int, s: float, theta: float) -> float:
    """``sup_{m < n} ||c_n - c_m||_{H^s} / |t_n - t_m|^theta`` on the grid."""
    if len(times) < 2:
        return 0.0
    D = pairwise_distances(c, d, s)
    dt = np.abs(times[:, None] - times[None, :])
    iu = np.triu_indices(len(times), 1)
    return float(np.max(D[iu] / dt[iu] ** theta))


def _check_grids(a: TrajectoryRecord, b: TrajectoryRecord):
    if a.snapshots.shape != b.snapshots.shape or not np.allclose(a.snap_times, b.snap_times, atol=1e-12):
        raise ValueError("trajectory records have mismatched snapshot grids")


@dataclass(frozen=True)
class MixingError:
    sup_error: float
    holder_error: float
    seminorm: float
    initial: float
    s: float
    theta: float


def mixing_error(T_rec: TrajectoryRecord, Tbar_rec: TrajectoryRecord, s: float = DEFAULT_S,
                 theta: float = DEFAULT_THETA) -> MixingError:
    """Grid versions of ``sup_t ||T - Tbar||_{H^{-s}}`` and of
    ``||T - Tbar||_{C^theta H^{-s}}`` (seminorm plus the value at ``t = 0``)."""
    HolderParams(theta, s)
    _check_grids(T_rec, Tbar_rec)
    d = T_rec.d
    D = T_rec.snapshots - Tbar_rec.snapshots
    n = norms(D, d, -s)
    semi = holder_seminorm(D, T_rec.snap_times, d, -s, theta)
    return MixingError(float(n.max()), float(semi + n[0]), float(semi), float(n[0]), float(s), float(theta))


def apply_A_batch(A: GeneratorA, c: np.ndarray) -> np.ndarray:
    """``A`` on a batch of coefficient arrays (leading axis)."""
    return A.apply_coeffs(c)


def _cumtrapz(y: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * h * (y[1:] + y[:-1]), axis=0)
    return out


@dataclass(frozen=True)
class FResidual:
    times: np.ndarray
    norms: np.ndarray
    holder_norm: float
    quadrature_error: float
    beta: float
    theta: float


def f_residual(T_rec: TrajectoryRecord, A: GeneratorA, theta: float = DEFAULT_THETA,
               beta: float = DEFAULT_BETA) -> FResidual:
    """Residual process ``f_t = T_t - T_0 - int_0^t A T_s ds`` on the
    snapshot grid (trapezoid rule), its ``C^theta H^{-beta}`` norm and a
    Richardson error bar from the half-density grid."""
    HolderParams(theta, beta, beta_floor=2.5)
    d = T_rec.d
    S = T_rec.snapshots
    AT = apply_A_batch(A, S)
    h = T_rec.delta
    f = S - S[0] - _cumtrapz(AT, h)
    fn = norms(f, d, -beta)
    semi = holder_seminorm(f, T_rec.snap_times, d, -beta, theta)
    qerr = float("nan")
    n = len(T_rec.snap_times) - 1
    if n >= 2 and n % 2 == 0:
        Sc, ATc = S[::2], AT[::2]
        fc = Sc - Sc[0] - _cumtrapz(ATc, 2 * h)
        qerr = float(np.max(norms(f[::2] - fc, d, -beta))) / 3.0
    return FResidual(T_rec.snap_times, fn, float(semi + fn[0]), qerr, float(beta), float(theta))


def discrete_holder_functional(T_rec: TrajectoryRecord, A: GeneratorA, phi: SpectralField,
                               theta: float = DEFAULT_THETA, delta: float | None = None) -> float:
    """``sup_{n > m} ((n-m) delta)^{-theta} |<phi, T_{n delta}> - <phi, T_{m delta}>
    - delta sum_{k=m}^{n-1} <A phi, T_{k delta}>|`` over ``0 <= m < n <= 1/delta``.

    Evaluated exactly with prefix sums; ``delta`` defaults to the record's
    snapshot spacing and must be a multiple of it.
    """
    HolderParams(theta)
    delta = T_rec.delta if delta is None else float(delta)
    stride = delta / T_rec.delta
    st = int(round(stride))
    if st < 1 or abs(stride - st) > 1e-8:
        raise ValueError("delta must be an integer multiple of the snapshot spacing")
    inv = 1.0 / delta
    if abs(inv - round(inv)) > 1e-8:
        raise ValueError("1/delta must be an integer")
    d, N = T_rec.d, T_rec.N
    if phi.d != d or phi.N > N:
        raise ValueError("test function must lie within the solver cutoff")
    ph = resize(phi.coeffs, d, N)
    Aph = A.apply_coeffs(ph) if A.N == N else resize(A.apply_coeffs(resize(ph, d, A.N)), d, N)
    S = T_rec.snapshots[::st]
    ax = tuple(range(1, d + 1))
    a = np.real(np.sum(ph * np.conj(S), axis=ax))
    b = np.real(np.sum(Aph * np.conj(S), axis=ax))
    P = np.concatenate([[0.0], np.cumsum(b)])[: len(a)]
    g = a - delta * P
    n = len(g)
    if n < 2:
        return 0.0
    idx = np.arange(n)
    gap = (idx[None, :] - idx[:, None]) * delta
    iu = np.triu_indices(n, 1)
    return float(np.max(np.abs(g[iu[1]] - g[iu[0]]) / gap[iu] ** theta))


@dataclass(frozen=True)
class DissipationVerdict:
    applicable: bool
    passed: bool
    c_path: float
    margin: float
    times: np.ndarray = field(repr=False, default=None)
    bound: np.ndarray = field(repr=False, default=None)
    observed: np.ndarray = field(repr=False, default=None)


def dissipation_bound(t, T0_norm: float, lam: float, kappa: float, c: float) -> np.ndarray:
    """``||T_0|| / (1 + kappa/(2 lam c^2) log((c^2 e^{2 lam t} + 1)/(c^2 + 1)))^{1/2}``
    (the ``c -> 0`` limit is taken analytically)."""
    t = np.asarray(t, dtype=float)
    growth = np.expm1(2 * lam * t)
    if c == 0:
        L = growth
    elif math.isinf(c):
        L = np.zeros_like(t)
    else:
        L = np.log1p(c * c * growth / (1 + c * c)) / (c * c)
    return T0_norm / np.sqrt(1 + kappa / (2 * lam) * L)


def dissipation_bound_check(T_rec: TrajectoryRecord, Tbar_rec: TrajectoryRecord, lam: float,
                            kappa: float, slack: float = math.sqrt(2.0)) -> DissipationVerdict:
    """Pathwise check of the enhanced-dissipation bound with
    ``c = sup_t ||T_t - Tbar_t||_{H^{-1}} / ||T_0||_{L^2}``, at every
    snapshot time, allowing a factor ``slack``."""
    if not (lam > 0 and kappa > 0):
        return DissipationVerdict(False, False, float("nan"), float("nan"))
    _check_grids(T_rec, Tbar_rec)
    d = T_rec.d
    l2 = norms(T_rec.snapshots, d, 0.0)
    diff = norms(T_rec.snapshots - Tbar_rec.snapshots, d, -1.0)
    T0n = float(l2[0])
    c = float(diff.max() / T0n) if T0n > 0 else 0.0
    bound = slack * dissipation_bound(T_rec.snap_times, T0n, lam, kappa, c)
    with np.errstate(divide="ignore"):
        ratio = np.where(l2 > 0, bound / np.maximum(l2, 1e-300), np.inf)
    margin = float(np.min(ratio))
    return DissipationVerdict(True, bool(np.all(l2 <= bound * (1 + 1e-12))), c, margin,
                              T_rec.snap_times, bound, l2)


@dataclass(frozen=True)
class TransferRow:
    t: float
    N_cut: float
    low_norm: float
    bound: float
    simple_bound: float
    high_fraction: float


def high_mode_transfer(T_rec: TrajectoryRecord, Tbar_rec: TrajectoryRecord, N_cuts) -> list[TransferRow]:
    """Per snapshot and cutoff: ``||pi_N T_t||``, the bound
    ``N (||Tbar_t||_{H^{-1}} + ||T_t - Tbar_t||_{H^{-1}})``, the simpler
    ``N ||T_t||_{H^{-1}}`` and the high-mode fraction
    ``1 - ||pi_N T_t||^2 / ||T_t||^2``."""
    _check_grids(T_rec, Tbar_rec)
    d, N = T_rec.d, T_rec.N
    k2 = wavenumber_sq(d, N)
    S, B = T_rec.snapshots, Tbar_rec.snapshots
    tot = norms(S, d, 0.0) ** 2
    hm_bar = norms(B, d, -1.0)
    hm_diff = norms(S - B, d, -1.0)
    hm = norms(S, d, -1.0)
    ax = tuple(range(1, d + 1))
    rows = []
    for Nc in N_cuts:
        mask = k2 <= float(Nc) ** 2 + 1e-9
        low = np.sqrt(np.sum(np.abs(S) ** 2 * mask, axis=ax))
        for i, t in enumerate(T_rec.snap_times):
            frac = 1.0 - low[i] ** 2 / tot[i] if tot[i] > 0 else 0.0
            rows.append(TransferRow(float(t), float(Nc), float(low[i]), float(Nc * (hm_bar[i] + hm_diff[i])),
                                    float(Nc * hm[i]), float(frac)))
    return rows


def max_increment(T_rec: TrajectoryRecord, delta_star: float, s: float = -1.0) -> float:
    """``sup_{t, 0 < delta <= delta_star} ||T_{t+delta} - T_t||_{H^s}`` over
    snapshot pairs."""
    D = pairwise_distances(T_rec.snapshots, T_rec.d, s)
    t = T_rec.snap_times
    gap = t[None, :] - t[:, None]
    mask = (gap > 1e-12) & (gap <= delta_star + 1e-12)
    return float(D[mask].max()) if mask.any() else 0.0


@dataclass(frozen=True)
class IncrementScaling:
    cells: list
    delta_exponent: float
    alpha_exponent: float
    notes: list


def increment_scaling(records_by_alpha: dict, delta_stars: dict) -> IncrementScaling:
    """Ensemble means of :func:`max_increment` per ``(alpha, delta_star)``
    and fitted exponents.

    ``delta_stars[alpha]`` lists the ``delta_star`` values for that alpha.
    The ``delta_star`` exponent is the mean log-log slope over alphas; the
    alpha exponent is the log-log slope of ``E / delta_star`` against alpha
    using the smallest admissible ``delta_star`` of every alpha.  Cells with
    ``delta_star alpha log(1 + alpha) <= 1`` are skipped with a note.
    """
    cells, notes = [], []
    d_slopes = []
    alpha_pts = []
    for alpha in sorted(records_by_alpha):
        recs = records_by_alpha[alpha]
        pts = []
        for ds in sorted(delta_stars[alpha]):
            if ds * alpha * math.log1p(alpha) <= 1:
                notes.append(f"alpha={alpha}, delta_star={ds}: delta_star*alpha*log(1+alpha) <= 1, skipped")
                continue
            vals = np.array([max_increment(r, ds) for r in recs])
            m, se = mean_se(vals)
            cells.append({"alpha": alpha, "delta_star": ds, "mean": m, "se": se})
            pts.append((ds, m))
        if len(pts) >= 2 and all(p[1] > 0 for p in pts):
            x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
            d_slopes.append(float(np.polyfit(x, y, 1)[0]))
        if pts and pts[0][1] > 0:
            alpha_pts.append((alpha, pts[0][1] / pts[0][0]))
    de = float(np.mean(d_slopes)) if d_slopes else float("nan")
    if len(alpha_pts) >= 2:
        ae = float(np.polyfit(np.log([p[0] for p in alpha_pts]), np.log([p[1] for p in alpha_pts]), 1)[0])
    else:
        ae = float("nan")
    return IncrementScaling(cells, de, ae, notes)


def mean_se(values) -> tuple[float, float]:
    """Mean and Monte Carlo standard error (fixed-order reductions)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    m = float(math.fsum(v.tolist()) / v.size)
    if v.size < 2:
        return m, float("nan")
    var = math.fsum(((v - m) ** 2).tolist()) / (v.size - 1)
    return m, float(math.sqrt(var / v.size))


def non_increasing_at_2se(means, ses) -> bool:
    """``m_{i+1} - m_i <= 2 sqrt(se_i^2 + se_{i+1}^2)`` for every step."""
    m, s = np.asarray(means, float), np.asarray(ses, float)
    return bool(np.all(np.diff(m) <= 2 * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)))


def decreasing_at_2se(means, ses) -> bool:
    """Every step decreases significantly: ``m_i - m_{i+1} > 2 sqrt(se_i^2 + se_{i+1}^2)``."""
    m, s = np.asarray(means, float), np.asarray(ses, float)
    return bool(np.all(-np.diff(m) > 2 * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)))


@dataclass
class DiagnosticsReport:
    """Per-path values and ensemble aggregates for one ``(alpha, kappa)``."""

    alpha: float
    kappa: float
    epsilon: float
    mu: float
    lam: float
    delta: float
    theta: float
    s: float
    beta: float
    per_path: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    failures: int = 0
    notes: list = field(default_factory=list)

    def aggregate(self, keys) -> None:
        ok = [p for p in self.per_path if not p.get("blowup", False)]
        for k in keys:
            m, se = mean_se([p[k] for p in ok])
            self.aggregates[k] = {"mean": m, "se": se, "n": len(ok)}

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")
