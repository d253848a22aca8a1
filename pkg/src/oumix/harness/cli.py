"""Command-line interface (``oumix`` / ``python -m oumix``).

Exit status: 0 success, 1 validation failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, ConfigError, load_config
from .report import ReportError, emit_report, load_results, save_results

log = logging.getLogger("oumix")


def _run(cfg, args, sweep: bool) -> int:
    from .ensemble import alpha_sweep, run_ensemble

    out = Path(args.output) if args.output else cfg.output_dir
    workers = args.workers if args.workers else None
    if sweep:
        result, trends = alpha_sweep(cfg, workers, allow_zero=args.allow_zero)
    else:
        result, trends = run_ensemble(cfg, workers), None
    run_id = cfg.raw.get("name", "run")
    save_results(result, out, run_id)
    emit_report(result.reports, result.curves, out, "csv", run_id)
    emit_report(result.reports, result.curves, out, "svg", run_id)
    if trends is not None:
        (out / "trends.json").write_text(json.dumps(trends, sort_keys=True, indent=2))
        for t in trends:
            log.info("kappa=%g %s slope=%.3g non_increasing=%s", t["kappa"], t["diagnostic"], t["slope"],
                     t["non_increasing_2se"])
    failures = sum(r.failures for r in result.reports)
    print(f"wrote {out} ({len(result.reports)} (alpha, kappa) cells, {failures} failed paths)")
    return EXIT_OK


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="oumix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name in ("simulate", "sweep"):
        sp = sub.add_parser(name, help=f"{name} from a JSON config")
        sp.add_argument("--config", required=True)
        sp.add_argument("--output", help="output directory (overrides the config)")
        sp.add_argument("--workers", type=int)
        if name == "sweep":
            sp.add_argument("--allow-zero", action="store_true", help="accept an epsilon = 0 family")
    sp = sub.add_parser("validate", help="run the self-validation suite")
    sp.add_argument("--full", action="store_true", help="include Monte Carlo checks")
    sp.add_argument("--inject-fault", choices=["hermitian"], help="negative control")
    sp = sub.add_parser("report", help="re-emit reports from a run directory")
    sp.add_argument("--in", dest="indir", required=True)
    sp.add_argument("--format", choices=["csv", "svg"], default="csv")
    sp.add_argument("--output", help="target directory (default: the input directory)")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.cmd in ("simulate", "sweep"):
            return _run(load_config(args.config), args, args.cmd == "sweep")
        if args.cmd == "validate":
            from .validate import format_table, validate

            res = validate("full" if args.full else "fast", args.inject_fault)
            print(format_table(res))
            return EXIT_OK if all(r.passed for r in res) else EXIT_VALIDATION
        if args.cmd == "report":
            run_id, reports, curves = load_results(args.indir)
            files = emit_report(reports, curves, args.output or args.indir, args.format, run_id)
            print("\n".join(str(f) for f in files))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
