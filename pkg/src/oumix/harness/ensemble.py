"""Ensemble orchestration and alpha sweeps.

Work is split into chunks of ``chunk`` consecutive members (independent of
the worker count).  Each chunk simulates its members' OU drivers from
per-member streams, solves all kappas in one batch, and evaluates every
per-path diagnostic.  Chunks are reduced in member order, so the output is
identical for any number of workers.
"""
from __future__ import annotations

import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__
from ..diagnostics import (
    DiagnosticsReport,
    decreasing_at_2se,
    discrete_holder_functional,
    dissipation_bound_check,
    f_residual,
    high_mode_transfer,
    max_increment,
    mean_se,
    mixing_error,
    non_increasing_at_2se,
)
from ..ou import OuConfig, make_rng, simulate_path
from ..solvers import (
    SolverConfig,
    choose_dt,
    energy_equality_residual,
    snapshot_delta,
    solve_effective,
    solve_ensemble,
    stability_limit,
)
from ..spectral import shell_spectrum
from ..velocity import (
    ConvergenceError,
    assemble_A,
    epsilon,
    isotropy_matrix,
    mu,
    principal_eigenvalue,
)
from .config import ConfigError, ExperimentConfig, mu_warning

SEED_POLICY = "numpy SeedSequence(master_seed, spawn_key=(member,)) with PCG64; same stream for every alpha and kappa"

PATH_FIELDS = [
    "member", "alpha", "kappa", "sup_error", "holder_error", "f_holder", "f_quad_error",
    "discrete_functional", "l2_initial", "l2_final", "l2_transfer", "energy_drift", "energy_residual",
    "molecular_ok", "dissipation_applicable", "dissipation_pass", "c_path", "dissipation_margin",
    "high_fraction_initial", "high_fraction_transfer", "transfer_bound_ok", "tail_fraction",
    "cfl_margin", "blowup",
]


@dataclass(frozen=True)
class AlphaPlan:
    alpha: float
    delta: float
    dt: float
    dt_limit: float
    n_steps: int
    horizon: float


def plan_alpha(cfg: ExperimentConfig, fam, alpha: float) -> AlphaPlan:
    hz = float(cfg.solver["horizon"])
    delta = snapshot_delta(alpha, float(cfg.diag["c1"]), float(cfg.diag["c2"]), horizon=hz)
    lim = stability_limit(fam, cfg.N, alpha, cfg.ensemble)
    dt = choose_dt(lim * float(cfg.solver["dt_fraction"]), delta)
    return AlphaPlan(float(alpha), delta, dt, lim, int(round(hz / dt)), hz)


def noise_geometry(cfg: ExperimentConfig, fam) -> dict:
    iso = isotropy_matrix(fam)
    eps = epsilon(fam)
    m = mu(fam, float(cfg.diag["gamma"]), int(cfg.diag["mu_cutoff"]))
    lams = {}
    for kappa in cfg.kappas:
        try:
            lams[repr(kappa)] = principal_eigenvalue(assemble_A(fam, kappa, cfg.N))
        except ConvergenceError:
            lams[repr(kappa)] = float("nan")
    return {
        "epsilon": eps, "mu": asdict(m), "kappa_bar": iso.kappa_bar, "isotropic": iso.isotropic,
        "isotropy_deviation": iso.deviation, "lambda": lams, "J": fam.J, "K": fam.K,
        "alpha_smallness_proxy": {repr(a): m.value * a ** (-0.1) * math.log1p(a) for a in cfg.alphas},
        "mu_warning": mu_warning(m.value) if m.value <= 1 else None,
    }


def _effective_records(cfg: ExperimentConfig, fam, T0, plan: AlphaPlan) -> dict:
    out = {}
    for kappa in cfg.kappas:
        scfg = SolverConfig(kappa, cfg.N, plan.dt, plan.delta, plan.horizon, check_stability=False)
        out[kappa] = solve_effective(T0, assemble_A(fam, kappa, cfg.N), scfg)
    return out


def _chunk_task(args):
    raw, alpha, plan, members, lams, want_curves = args
    ecfg = ExperimentConfig(raw)
    fam = ecfg.family()
    T0 = ecfg.initial_field()
    phi = ecfg.test_function()
    dg = ecfg.diag
    kappas = ecfg.kappas
    N = ecfg.N
    pl = AlphaPlan(**plan)
    tbar = _effective_records(ecfg, fam, T0, pl)
    paths = []
    for m in members:
        ocfg = OuConfig(pl.alpha, fam.J, pl.dt / 2, horizon=pl.horizon, seed=ecfg.seed)
        paths.append(simulate_path(ocfg, make_rng(ecfg.seed, m)))
    batch_paths = [p for p in paths for _ in kappas]
    batch_kappas = [k for _ in paths for k in kappas]
    scfg = SolverConfig(0.0, N, pl.dt, pl.delta, pl.horizon, ensemble_size=ecfg.ensemble,
                        route=ecfg.solver["route"])
    try:
        recs = solve_ensemble(T0, fam, batch_paths, scfg, kappas=batch_kappas)
    except Exception as exc:  # recorded as failures, the run continues
        return {"rows": [], "failures": len(members) * len(kappas), "error": repr(exc), "curves": None}
    gens = {k: assemble_A(fam, k, N) for k in kappas}
    theta, s, beta = float(dg["theta"]), float(dg["s"]), float(dg["beta"])
    t_tr = float(dg["transfer_time"])
    i_tr = int(np.argmin(np.abs(recs[0].snap_times - t_tr)))
    ds_list = [mult * pl.delta for mult in dg["delta_star_multiples"]]
    rows = []
    curves = None
    failures = 0
    for idx, rec in enumerate(recs):
        m = members[idx // len(kappas)]
        kappa = batch_kappas[idx]
        if rec.blowup:
            failures += 1
            rows.append({"member": m, "alpha": pl.alpha, "kappa": kappa, "blowup": True})
            continue
        tb = tbar[kappa]
        me = mixing_error(rec, tb, s, theta)
        fr = f_residual(rec, gens[kappa], theta, beta)
        dh = discrete_holder_functional(rec, gens[kappa], phi, theta)
        l2 = np.sqrt(rec.l2sq)
        snap_l2 = np.sqrt(np.sum(np.abs(rec.snapshots) ** 2, axis=tuple(range(1, rec.d + 1))))
        mol = bool(np.all(snap_l2 <= np.exp(-kappa * rec.snap_times) * snap_l2[0] * (1 + 1e-6)))
        lam = lams[repr(kappa)]
        dv = dissipation_bound_check(rec, tb, lam, kappa) if (kappa > 0 and lam == lam) else None
        tr = high_mode_transfer(rec, tb, dg["N_cuts"])
        n_s = len(rec.snap_times)
        row = {
            "member": m, "alpha": pl.alpha, "kappa": kappa,
            "sup_error": me.sup_error, "holder_error": me.holder_error,
            "f_holder": fr.holder_norm, "f_quad_error": fr.quadrature_error,
            "discrete_functional": dh, "l2_initial": float(l2[0]), "l2_final": float(l2[-1]),
            "l2_transfer": float(snap_l2[i_tr]),
            "energy_drift": float(abs(l2[-1] - l2[0]) / l2[0]),
            "energy_residual": energy_equality_residual(rec) / float(rec.l2sq[0]),
            "molecular_ok": mol,
            "dissipation_applicable": dv is not None,
            "dissipation_pass": bool(dv.passed) if dv else False,
            "c_path": float(dv.c_path) if dv else float("nan"),
            "dissipation_margin": float(dv.margin) if dv else float("nan"),
            "high_fraction_initial": float(tr[0].high_fraction),
            "high_fraction_transfer": float(tr[i_tr].high_fraction),
            "transfer_bound_ok": bool(all(r.low_norm <= r.simple_bound * (1 + 1e-12) + 1e-300 for r in tr)),
            "tail_fraction": rec.tail_fraction, "cfl_margin": rec.cfl_margin, "blowup": False,
        }
        for j, ds in enumerate(ds_list):
            row[f"increment_{j}"] = max_increment(rec, ds)
        for j, Nc in enumerate(dg["N_cuts"]):
            row[f"high_fraction_N{Nc}"] = float(tr[j * n_s + i_tr].high_fraction)
        rows.append(row)
        if want_curves and m == members[0] and kappa == max(kappas):
            shells, spec = shell_spectrum(rec.snapshots[[0, n_s // 2, n_s - 1]], rec.d)
            curves = {
                "kappa": kappa, "times": rec.snap_times.tolist(), "l2": snap_l2.tolist(),
                "bound": (dv.bound.tolist() if dv else [float("nan")] * n_s),
                "spectrum_times": [float(rec.snap_times[i]) for i in (0, n_s // 2, n_s - 1)],
                "shells": shells.tolist(), "spectra": spec.tolist(),
            }
    return {"rows": rows, "failures": failures, "error": None, "curves": curves}


@dataclass
class RunResult:
    reports: list
    manifest: dict
    curves: dict = field(default_factory=dict)

    def report_for(self, alpha: float, kappa: float) -> DiagnosticsReport:
        for r in self.reports:
            if r.alpha == alpha and r.kappa == kappa:
                return r
        raise KeyError((alpha, kappa))


AGGREGATE_KEYS = [
    "sup_error", "holder_error", "f_holder", "discrete_functional", "l2_final", "l2_transfer",
    "energy_drift", "energy_residual", "c_path", "high_fraction_initial", "high_fraction_transfer",
    "tail_fraction",
]


def run_ensemble(cfg: ExperimentConfig, workers: int | None = None, alphas=None) -> RunResult:
    """Simulate every ``(alpha, kappa)`` ensemble of ``cfg`` and evaluate
    all diagnostics.  Deterministic given the config (and its seed)."""
    t_start = time.perf_counter()
    fam = cfg.family()
    workers = cfg.workers if workers is None else int(workers)
    geo = noise_geometry(cfg, fam)
    alphas = cfg.alphas if alphas is None else list(alphas)
    plans = {a: plan_alpha(cfg, fam, a) for a in alphas}
    members = list(range(cfg.ensemble))
    chunks = [members[i:i + cfg.chunk] for i in range(0, len(members), cfg.chunk)]
    tasks = []
    for a in alphas:
        for ci, ch in enumerate(chunks):
            tasks.append((cfg.raw, a, asdict(plans[a]), ch, geo["lambda"], ci == 0))
    if workers <= 1:
        results = [_chunk_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_chunk_task, tasks))
    reports, curves = [], {}
    it = iter(results)
    errors = sorted({r["error"] for r in results if r["error"]})
    for a in alphas:
        per = [next(it) for _ in chunks]
        for kappa in cfg.kappas:
            rep = DiagnosticsReport(
                alpha=a, kappa=kappa, epsilon=geo["epsilon"], mu=geo["mu"]["value"],
                lam=geo["lambda"][repr(kappa)], delta=plans[a].delta, theta=float(cfg.diag["theta"]),
                s=float(cfg.diag["s"]), beta=float(cfg.diag["beta"]))
            for ch, res in zip(chunks, per):
                rep.per_path.extend(r for r in res["rows"] if r["kappa"] == kappa)
                if res["error"]:
                    rep.failures += len(ch)
                    rep.notes.append(f"members {ch[0]}..{ch[-1]} aborted: {res['error']}")
                else:
                    rep.failures += sum(1 for r in res["rows"] if r["kappa"] == kappa and r.get("blowup"))
            rep.per_path.sort(key=lambda r: r["member"])
            keys = AGGREGATE_KEYS + sorted(k for k in (rep.per_path[0] if rep.per_path else {})
                                           if k.startswith("increment_") or k.startswith("high_fraction_N"))
            rep.aggregate(keys)
            if kappa > 0:
                ok = [r for r in rep.per_path if not r.get("blowup")]
                rep.aggregates["dissipation_pass_fraction"] = {
                    "mean": (sum(r["dissipation_pass"] for r in ok) / len(ok)) if ok else float("nan"),
                    "se": float("nan"), "n": len(ok)}
            reports.append(rep)
        c = per[0]["curves"]
        if c is not None:
            curves[repr(a)] = c
    manifest = {
        "config": cfg.raw,
        "seed_policy": SEED_POLICY,
        "master_seed": cfg.seed,
        "member_seeds": {"spawn_keys": members},
        "plans": {repr(a): asdict(p) for a, p in plans.items()},
        "noise_geometry": geo,
        "versions": _versions(),
        "workers": workers,
        "chunk": cfg.chunk,
        "errors": errors,
        "wall_clock_seconds": time.perf_counter() - t_start,
    }
    return RunResult(reports, manifest, curves)


def _versions() -> dict:
    import numba
    import scipy

    return {"oumix": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


TREND_KEYS = ["sup_error", "holder_error", "f_holder", "discrete_functional"]


def trend_table(result: RunResult, keys=TREND_KEYS) -> list[dict]:
    """Per ``(kappa, diagnostic)``: means and errors vs alpha, the fitted
    log-log slope of ``mean - floor`` (floor: mean at the largest alpha),
    and monotonicity verdicts at 2 standard errors."""
    rows = []
    kappas = sorted({r.kappa for r in result.reports})
    for kappa in kappas:
        reps = sorted((r for r in result.reports if r.kappa == kappa), key=lambda r: r.alpha)
        alphas = np.array([r.alpha for r in reps])
        for key in keys:
            m = np.array([r.aggregates[key]["mean"] for r in reps])
            se = np.array([r.aggregates[key]["se"] for r in reps])
            floor = m[-1]
            exc = m[:-1] - floor
            ok = exc > 0
            slope = float(np.polyfit(np.log(alphas[:-1][ok]), np.log(exc[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
            rows.append({
                "kappa": kappa, "diagnostic": key, "alphas": alphas.tolist(), "means": m.tolist(),
                "ses": se.tolist(), "floor": float(floor), "slope": slope,
                "non_increasing_2se": non_increasing_at_2se(m, se),
                "decreasing_2se": decreasing_at_2se(m, se),
                "ratio_last_first": float(m[-1] / m[0]) if m[0] != 0 else float("nan"),
            })
    return rows


def alpha_sweep(cfg: ExperimentConfig, workers: int | None = None, allow_zero: bool = False):
    """Run the ensemble over all alphas and return ``(result, trends)``.

    Needs at least three geometrically spaced alphas.  A family with
    ``epsilon = 0`` (all fields vanish) is rejected unless ``allow_zero``,
    because its trend is identically zero; use a small-epsilon family.
    """
    al = sorted(cfg.alphas)
    if len(al) < 3:
        raise ConfigError("an alpha sweep needs at least 3 alpha values")
    ratios = np.diff(np.log(al))
    if np.any(ratios <= 0) or np.ptp(ratios) > 1e-6 * max(abs(ratios).max(), 1):
        raise ConfigError("alpha values of a sweep must be geometrically spaced")
    fam = cfg.family()
    if epsilon(fam) == 0 and not allow_zero:
        raise ConfigError("epsilon = 0 only for the zero family (all u_j = 0), whose trend is trivially "
                          "flat; use a small-epsilon family instead")
    result = run_ensemble(cfg, workers)
    return result, trend_table(result)


def validate_spacing(means, ses) -> dict:
    return {"non_increasing": non_increasing_at_2se(means, ses), "decreasing": decreasing_at_2se(means, ses)}


__all__ = ["run_ensemble", "alpha_sweep", "trend_table", "RunResult", "plan_alpha", "AlphaPlan",
           "noise_geometry", "PATH_FIELDS", "AGGREGATE_KEYS", "mean_se"]
