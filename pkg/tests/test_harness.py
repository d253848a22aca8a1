"""Tests for the experiment harness: configs, ensembles, reports, CLI."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from oumix.harness.cli import main
from oumix.harness.config import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VALIDATION,
    OUTPUT_ROOT_ENV,
    ConfigError,
    load_config,
    validate_config,
)
from oumix.harness.ensemble import alpha_sweep, plan_alpha, run_ensemble, trend_table
from oumix.harness.report import (
    AGGREGATE_COLUMNS,
    CSV_FILES,
    CURVE_COLUMNS,
    KEY_COLUMNS,
    PER_PATH_VALUE_COLUMNS,
    SVG_FILES,
    ReportError,
    emit_report,
    load_results,
    save_results,
)
from oumix.harness.validate import validate

ISO = {"d": 2, "shells": [{"radius_sq": 1, "kappa_bar": 0.5}]}
ZERO = {"d": 2, "shells": [{"radius_sq": 1, "amplitude": 0.0}]}


def small(**kw):
    raw = {"name": "t", "family": ISO, "N": 8, "alphas": [25.0], "kappas": [0.0, 0.01], "ensemble": 2}
    raw.update(kw)
    return raw


@pytest.fixture(scope="module")
def small_run():
    return run_ensemble(validate_config(small()))


@pytest.fixture(scope="module")
def zero_run():
    with pytest.warns(UserWarning, match="mu"):
        return run_ensemble(validate_config(small(family=ZERO)))


class TestConfig:
    @pytest.mark.parametrize("override,match", [
        ({"alphas": [1.0]}, "alpha"),
        ({"kappas": [1.5]}, "kappa"),
        ({"ensemble": 1}, "ensemble"),
        ({"diagnostics": {"gamma": 0.2}}, "gamma"),
        ({"diagnostics": {"beta": 2.5}}, "beta"),
        ({"diagnostics": {"c2": 0.8}}, "c2"),
        ({"solver": {"dt_fraction": 1.5}}, "dt_fraction"),
        ({"family": {"d": 4, "shells": [{"radius_sq": 1, "amplitude": 1}]}}, "family.d"),
        ({"T0": {"kind": "wavelet"}}, "kind"),
    ])
    def test_rejections(self, override, match):
        with pytest.raises(ConfigError, match=match):
            validate_config(small(**override))

    def test_family_required(self):
        with pytest.raises(ConfigError, match="family"):
            validate_config({"N": 8})

    def test_defaults_filled(self):
        cfg = validate_config({"family": ISO})
        assert cfg.N == 32 and cfg.diag["theta"] == 0.05 and len(cfg.alphas) == 4

    def test_output_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        assert validate_config(small(output="x")).output_dir == tmp_path / "x"
        assert validate_config(small(output="/abs")).output_dir == Path("/abs")

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(tmp_path / "bad.json")

    def test_plan_respects_rules(self):
        cfg = validate_config(small())
        fam = cfg.family()
        for a in (25.0, 400.0):
            p = plan_alpha(cfg, fam, a)
            assert p.dt <= p.dt_limit and p.dt <= 0.2 / a
            assert abs(p.delta / p.dt - round(p.delta / p.dt)) < 1e-9
            assert abs(1 / p.delta - round(1 / p.delta)) < 1e-9


class TestEnsemble:
    def test_zero_family_has_no_mixing_error(self, zero_run):
        for rep in zero_run.reports:
            for row in rep.per_path:
                assert row["sup_error"] <= 1e-12 and row["holder_error"] <= 1e-12

    def test_aggregate_equals_per_path_mean(self, small_run):
        for rep in small_run.reports:
            for key in ("sup_error", "holder_error", "l2_final"):
                ref = np.mean([r[key] for r in rep.per_path])
                assert rep.aggregates[key]["mean"] == pytest.approx(ref, abs=1e-12)
                assert rep.aggregates[key]["n"] == 2

    def test_manifest(self, small_run):
        m = small_run.manifest
        assert m["master_seed"] == validate_config(small()).seed
        assert m["member_seeds"]["spawn_keys"] == [0, 1]
        assert set(m["versions"]) >= {"numpy", "scipy", "numba", "oumix"}
        assert m["noise_geometry"]["isotropic"]

    def test_report_lookup(self, small_run):
        assert small_run.report_for(25.0, 0.01).kappa == 0.01
        with pytest.raises(KeyError):
            small_run.report_for(26.0, 0.01)

    def test_sweep_needs_three_alphas(self):
        with pytest.raises(ConfigError, match="3"):
            alpha_sweep(validate_config(small(alphas=[25.0, 100.0])))

    def test_sweep_needs_geometric_spacing(self):
        with pytest.raises(ConfigError, match="geometric"):
            alpha_sweep(validate_config(small(alphas=[25.0, 100.0, 200.0])))

    def test_sweep_rejects_zero_family(self):
        with pytest.raises(ConfigError, match="epsilon"):
            alpha_sweep(validate_config(small(family=ZERO, alphas=[25.0, 50.0, 100.0])))

    def test_trend_table(self, small_run):
        rows = trend_table(small_run)
        assert {r["diagnostic"] for r in rows} >= {"sup_error", "holder_error"}
        assert all(len(r["means"]) == 1 for r in rows)


class TestReport:
    def test_csv_schema(self, small_run, tmp_path):
        files = emit_report(small_run.reports, small_run.curves, tmp_path, "csv", "t")
        assert [f.name for f in files] == list(CSV_FILES)
        with (tmp_path / "per_path.csv").open() as fh:
            header = next(csv.reader(fh))
        assert header[: len(KEY_COLUMNS) + len(PER_PATH_VALUE_COLUMNS)] == KEY_COLUMNS + PER_PATH_VALUE_COLUMNS
        with (tmp_path / "aggregate.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == AGGREGATE_COLUMNS
        assert AGGREGATE_COLUMNS == ["run_id", "alpha", "kappa", "epsilon", "mu", "lambda", "delta",
                                     "diagnostic", "mean", "se", "n", "failures"]
        with (tmp_path / "curves.csv").open() as fh:
            assert next(csv.reader(fh)) == CURVE_COLUMNS

    def test_values_round_trip_exactly(self, small_run, tmp_path):
        emit_report(small_run.reports, small_run.curves, tmp_path, "csv", "t")
        rows = list(csv.DictReader((tmp_path / "per_path.csv").open()))
        ref = small_run.reports[0].per_path[0]["sup_error"]
        assert float(rows[0]["sup_error"]) == ref

    def test_svg(self, small_run, tmp_path):
        files = emit_report(small_run.reports, small_run.curves, tmp_path, "svg")
        assert [f.name for f in files] == list(SVG_FILES)
        for f in files:
            assert f.read_text().lstrip().startswith("<svg")

    def test_empty_reports(self, tmp_path):
        with pytest.raises(ReportError, match="no diagnostics"):
            emit_report([], {}, tmp_path, "csv")

    def test_unwritable_directory(self, small_run, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ReportError, match="writable"):
            emit_report(small_run.reports, small_run.curves, blocker / "sub", "csv")

    def test_save_load(self, small_run, tmp_path):
        save_results(small_run, tmp_path, "t")
        run_id, reports, curves = load_results(tmp_path)
        assert run_id == "t" and len(reports) == len(small_run.reports)
        assert reports[1].aggregates["sup_error"]["mean"] == small_run.reports[1].aggregates["sup_error"]["mean"]
        assert json.loads((tmp_path / "manifest.json").read_text())["master_seed"] == small_run.manifest["master_seed"]


class TestValidate:
    def test_fast_suite_passes(self):
        res = validate("fast")
        assert all(r.passed for r in res), [r for r in res if not r.passed]

    def test_injected_fault_is_caught(self):
        res = validate("fast", "hermitian")
        assert not next(r for r in res if r.name == "hermitian_scan").passed


class TestCli:
    def test_simulate_and_report(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(small(ensemble=2, alphas=[25.0], kappas=[0.01])))
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == EXIT_OK
        for f in CSV_FILES + SVG_FILES + ("results.json", "manifest.json"):
            assert (out / f).exists()
        assert main(["report", "--in", str(out), "--format", "svg", "--output", str(tmp_path / "r")]) == EXIT_OK
        assert (tmp_path / "r" / "spectra.svg").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(small(alphas=[0.5])))
        assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG
        assert "alpha" in capsys.readouterr().err

    def test_validation_failure_exit_code(self, capsys):
        assert main(["validate", "--inject-fault", "hermitian"]) == EXIT_VALIDATION
        assert main(["validate"]) == EXIT_OK

    def test_report_error_exit_code(self, tmp_path, capsys):
        (tmp_path / "results.json").write_text(json.dumps({"run_id": "x", "reports": [], "curves": {}}))
        assert main(["report", "--in", str(tmp_path)]) == EXIT_VALIDATION
