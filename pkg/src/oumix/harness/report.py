"""CSV and SVG report emission.

Output schema (frozen; see README):

``per_path.csv``
    ``run_id, alpha, kappa, epsilon, path_id`` followed by :data:`PER_PATH_VALUE_COLUMNS`.
``aggregate.csv``
    :data:`AGGREGATE_COLUMNS` -- one row per ``(alpha, kappa, diagnostic)``.
``curves.csv``
    :data:`CURVE_COLUMNS` -- ``||T_t||`` with its dissipation bound, and
    shell energy spectra, for member 0 of every alpha.

SVG charts: ``mixing_vs_alpha.svg`` (log-log), ``dissipation_bound.svg`` and
``spectra.svg``.  Floats are written with ``repr`` so that files are
byte-reproducible.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from ..diagnostics import DiagnosticsReport

KEY_COLUMNS = ["run_id", "alpha", "kappa", "epsilon", "path_id"]
PER_PATH_VALUE_COLUMNS = [
    "sup_error", "holder_error", "f_holder", "f_quad_error", "discrete_functional", "l2_initial",
    "l2_final", "l2_transfer", "energy_drift", "energy_residual", "molecular_ok", "dissipation_applicable",
    "dissipation_pass", "c_path", "dissipation_margin", "high_fraction_initial", "high_fraction_transfer",
    "transfer_bound_ok", "tail_fraction", "cfl_margin", "blowup",
]
AGGREGATE_COLUMNS = ["run_id", "alpha", "kappa", "epsilon", "mu", "lambda", "delta", "diagnostic", "mean",
                     "se", "n", "failures"]
CURVE_COLUMNS = ["run_id", "alpha", "kappa", "curve", "x", "y"]
CSV_FILES = ("per_path.csv", "aggregate.csv", "curves.csv")
SVG_FILES = ("mixing_vs_alpha.svg", "dissipation_bound.svg", "spectra.svg")
RESULTS_FILE = "results.json"


class ReportError(RuntimeError):
    """Report emission failed (empty input or unwritable output)."""


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _extra_columns(reports) -> list[str]:
    extra = set()
    for r in reports:
        for p in r.per_path:
            extra.update(k for k in p if k.startswith("increment_") or k.startswith("high_fraction_N"))
    return sorted(extra)


def per_path_columns(reports) -> list[str]:
    return KEY_COLUMNS + PER_PATH_VALUE_COLUMNS + _extra_columns(reports)


def _prepare_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ReportError(f"output directory {out} is not writable: {exc}") from exc
    return out


def write_csv(reports, curves: dict, out_dir, run_id: str = "run") -> list[Path]:
    if not reports:
        raise ReportError("no diagnostics reports to write")
    out = _prepare_dir(out_dir)
    cols = per_path_columns(reports)
    paths = []
    p = out / "per_path.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in reports:
            for row in r.per_path:
                vals = {"run_id": run_id, "alpha": r.alpha, "kappa": r.kappa, "epsilon": r.epsilon,
                        "path_id": row["member"], **row}
                w.writerow([_fmt(vals.get(c, "")) for c in cols])
    paths.append(p)
    p = out / "aggregate.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for r in reports:
            for key in sorted(r.aggregates):
                a = r.aggregates[key]
                w.writerow([_fmt(x) for x in (run_id, r.alpha, r.kappa, r.epsilon, r.mu, r.lam, r.delta, key,
                                              float(a["mean"]), float(a["se"]), int(a["n"]), r.failures)])
    paths.append(p)
    p = out / "curves.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for akey in sorted(curves, key=float):
            c = curves[akey]
            for t, y in zip(c["times"], c["l2"]):
                w.writerow([_fmt(x) for x in (run_id, float(akey), c["kappa"], "l2", float(t), float(y))])
            for t, y in zip(c["times"], c["bound"]):
                w.writerow([_fmt(x) for x in (run_id, float(akey), c["kappa"], "bound", float(t), float(y))])
            for ts, spec in zip(c["spectrum_times"], c["spectra"]):
                for sh, e in zip(c["shells"], spec):
                    if sh == 0:
                        continue
                    w.writerow([_fmt(x) for x in (run_id, float(akey), c["kappa"], f"spectrum_t={ts!r}",
                                                  int(sh), float(e))])
    paths.append(p)
    return paths


# --------------------------------------------------------------------- SVG

_W, _H, _M = 640, 420, 60
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def _svg_chart(series, title, xlabel, ylabel, logx=False, logy=False) -> str:
    """Minimal polyline chart; ``series`` is a list of (label, xs, ys, dashed)."""
    def tx(v, lg):
        return math.log10(v) if lg else v

    pts = [(tx(x, logx), tx(y, logy)) for _, xs, ys, _ in series for x, y in zip(xs, ys)
           if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def px(x):
        return _M + (x - x0) / (x1 - x0) * (_W - 2 * _M)

    def py(y):
        return _H - _M - (y - y0) / (y1 - y0) * (_H - 2 * _M)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{_W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>',
           f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_H - _M}" stroke="black"/>',
           f'<line x1="{_M}" y1="{_M}" x2="{_M}" y2="{_H - _M}" stroke="black"/>',
           f'<text x="{_W / 2}" y="{_H - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">'
           f'{xlabel}{" (log10)" if logx else ""}</text>',
           f'<text x="15" y="{_H / 2}" transform="rotate(-90 15 {_H / 2})" text-anchor="middle" '
           f'font-family="sans-serif" font-size="12">{ylabel}{" (log10)" if logy else ""}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{px(xv):.1f}" y="{_H - _M + 16}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{_M - 6}" y="{py(yv):.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{yv:.3g}</text>')
    for i, (label, xs, ys, dashed) in enumerate(series):
        col = _COLORS[i % len(_COLORS)]
        seg = [f"{px(tx(x, logx)):.2f},{py(tx(y, logy)):.2f}" for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        if seg:
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.6"{dash} points="{" ".join(seg)}"/>')
        out.append(f'<text x="{_W - _M + 4 - 120}" y="{_M + 14 * i}" font-family="sans-serif" font-size="11" '
                   f'fill="{col}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(reports, curves: dict, out_dir, metric: str = "holder_error") -> list[Path]:
    if not reports:
        raise ReportError("no diagnostics reports to plot")
    out = _prepare_dir(out_dir)
    series = []
    for kappa in sorted({r.kappa for r in reports}):
        rs = sorted((r for r in reports if r.kappa == kappa and metric in r.aggregates), key=lambda r: r.alpha)
        series.append((f"kappa={kappa:g}", [r.alpha for r in rs], [r.aggregates[metric]["mean"] for r in rs], False))
    files = []
    p = out / "mixing_vs_alpha.svg"
    p.write_text(_svg_chart(series, f"ensemble mean {metric} vs alpha", "alpha", metric, True, True))
    files.append(p)
    series = []
    for akey in sorted(curves, key=float):
        c = curves[akey]
        series.append((f"alpha={float(akey):g} ||T_t||", c["times"], c["l2"], False))
        series.append((f"alpha={float(akey):g} bound", c["times"], c["bound"], True))
    p = out / "dissipation_bound.svg"
    p.write_text(_svg_chart(series, "||T_t|| (member 0) and dissipation bound", "t", "L2 norm"))
    files.append(p)
    series = []
    for akey in sorted(curves, key=float):
        c = curves[akey]
        for ts, spec in zip(c["spectrum_times"], c["spectra"]):
            series.append((f"alpha={float(akey):g} t={ts:.2g}", c["shells"][1:], spec[1:], False))
    p = out / "spectra.svg"
    p.write_text(_svg_chart(series, "shell energy spectra (member 0)", "|k|", "energy", True, True))
    files.append(p)
    return files


def emit_report(reports, curves: dict, out_dir, fmt: str = "csv", run_id: str = "run") -> list[Path]:
    """Write the CSV tables (``fmt="csv"``) or the SVG charts (``fmt="svg"``)."""
    if fmt == "csv":
        return write_csv(reports, curves, out_dir, run_id)
    if fmt == "svg":
        return write_svg(reports, curves, out_dir)
    raise ValueError("format must be 'csv' or 'svg'")


# ------------------------------------------------------------ persistence

def save_results(result, out_dir, run_id: str = "run") -> Path:
    """Store reports, curves and manifest as ``results.json`` and
    ``manifest.json`` so that :func:`load_results` can re-emit reports."""
    out = _prepare_dir(out_dir)
    doc = {"run_id": run_id, "reports": [json.loads(r.to_json()) for r in result.reports], "curves": result.curves}
    p = out / RESULTS_FILE
    p.write_text(json.dumps(doc, sort_keys=True, default=_nan_safe))
    (out / "manifest.json").write_text(json.dumps(result.manifest, sort_keys=True, indent=2, default=_nan_safe))
    return p


def _nan_safe(o):
    import numpy as np

    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def load_results(in_dir):
    """Inverse of :func:`save_results`; returns ``(run_id, reports, curves)``."""
    p = Path(in_dir) / RESULTS_FILE
    if not p.exists():
        raise ReportError(f"no {RESULTS_FILE} in {in_dir}")
    doc = json.loads(p.read_text())
    reports = [DiagnosticsReport(**r) for r in doc["reports"]]
    return doc["run_id"], reports, doc["curves"]


__all__ = ["emit_report", "write_csv", "write_svg", "save_results", "load_results", "ReportError",
           "KEY_COLUMNS", "PER_PATH_VALUE_COLUMNS", "AGGREGATE_COLUMNS", "CURVE_COLUMNS", "CSV_FILES", "SVG_FILES"]
