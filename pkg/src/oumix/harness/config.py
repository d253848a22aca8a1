"""Experiment configuration: JSON schema, defaults and validation.

A config file is a JSON object; every key is optional except ``family``.
See the README for the full schema.  Relative output directories are
resolved under ``$OUMIX_OUTPUT_ROOT`` when that variable is set.
"""
from __future__ import annotations

import copy
import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..spectral import SpectralField, shell_random_field
from ..velocity import VelocityFamily, family_from_recipe, gamma_bound

OUTPUT_ROOT_ENV = "OUMIX_OUTPUT_ROOT"
EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "name": "run",
    "N": 32,
    "kappas": [0.0, 1e-3, 1e-2],
    "alphas": [25.0, 100.0, 400.0, 1600.0],
    "ensemble": 64,
    "seed": 20240601,
    "workers": 1,
    "chunk": 8,
    "output": "oumix_out",
    "T0": {"kind": "shell", "kmin": 1.0, "kmax": 2.0, "seed": 7},
    "solver": {"horizon": 1.0, "dt_fraction": 1.0, "route": "auto"},
    "diagnostics": {
        "theta": 0.05, "s": 1.0, "beta": 2.6, "gamma": 0.1,
        "c1": 4.0, "c2": 0.9, "N_cuts": [2, 4, 8], "transfer_time": 0.5,
        "phi": {"kind": "shell", "kmin": 1.0, "kmax": 2.0, "seed": 11},
        "delta_star_multiples": [1, 2, 4], "mu_cutoff": 8,
    },
}


class ConfigError(ValueError):
    """Invalid configuration (maps to exit status 2)."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully resolved experiment configuration."""

    raw: dict

    @property
    def family_recipe(self) -> dict:
        return self.raw["family"]

    @property
    def N(self) -> int:
        return int(self.raw["N"])

    @property
    def kappas(self) -> list[float]:
        return [float(k) for k in self.raw["kappas"]]

    @property
    def alphas(self) -> list[float]:
        return [float(a) for a in self.raw["alphas"]]

    @property
    def ensemble(self) -> int:
        return int(self.raw["ensemble"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def chunk(self) -> int:
        return int(self.raw["chunk"])

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    @property
    def solver(self) -> dict:
        return self.raw["solver"]

    @property
    def diag(self) -> dict:
        return self.raw["diagnostics"]

    @property
    def output_dir(self) -> Path:
        out = Path(self.raw["output"])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def family(self) -> VelocityFamily:
        return family_from_recipe(self.family_recipe)

    def initial_field(self) -> SpectralField:
        return field_from_spec(self.raw["T0"], self.family_recipe["d"], self.N)

    def test_function(self) -> SpectralField:
        return field_from_spec(self.diag["phi"], self.family_recipe["d"], self.N)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return validate_config(_merge(self.raw, kw))

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)


def field_from_spec(spec: dict, d: int, N: int) -> SpectralField:
    """``{"kind": "shell", kmin, kmax, seed, norm}`` or
    ``{"kind": "modes", "modes": [[k_1, ..., k_d, re, im], ...]}``."""
    kind = spec.get("kind", "shell")
    if kind == "shell":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return shell_random_field(d, N, rng, float(spec.get("kmin", 1.0)), float(spec.get("kmax", 2.0)),
                                  float(spec.get("norm", 1.0)))
    if kind == "modes":
        modes = {}
        for row in spec["modes"]:
            modes[tuple(int(x) for x in row[:d])] = complex(row[d], row[d + 1] if len(row) > d + 1 else 0.0)
        f = SpectralField.from_modes(d, N, modes)
        if "norm" in spec:
            f = f * (float(spec["norm"]) / float(np.sqrt(np.sum(np.abs(f.coeffs) ** 2))))
        return f
    raise ConfigError(f"unknown field kind {kind!r}")


def validate_config(raw: dict) -> ExperimentConfig:
    """Merge defaults and check every hypothesis the model relies on."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "family" not in raw:
        raise ConfigError("config must define 'family' (d and shells)")
    cfg = _merge(DEFAULTS, raw)
    fam = cfg["family"]
    d = fam.get("d")
    if d not in (2, 3):
        raise ConfigError("family.d must be 2 or 3")
    if not fam.get("shells"):
        raise ConfigError("family.shells must be a nonempty list")
    for key in ("kappas", "alphas"):
        if not isinstance(cfg[key], list) or not cfg[key]:
            raise ConfigError(f"'{key}' must be a nonempty list")
    for a in cfg["alphas"]:
        if not float(a) > 1:
            raise ConfigError(f"every alpha must exceed 1 (the OU model assumes alpha > 1); got {a}")
    for k in cfg["kappas"]:
        if not 0 <= float(k) <= 1:
            raise ConfigError(f"every kappa must lie in [0, 1]; got {k}")
    if int(cfg["ensemble"]) < 2:
        raise ConfigError("ensemble size must be >= 2 (Monte Carlo errors need two samples)")
    if int(cfg["N"]) < 2:
        raise ConfigError("N must be >= 2")
    if int(cfg["chunk"]) < 1 or int(cfg["workers"]) < 1:
        raise ConfigError("chunk and workers must be >= 1")
    dg = cfg["diagnostics"]
    d_eff = 3
    gb = gamma_bound(d_eff)
    if not 0 < float(dg["gamma"]) < gb:
        raise ConfigError(f"gamma must satisfy 0 < gamma < (d-2)/6 = {gb:.6g} for the effective dimension "
                          f"d = {d_eff} (two-dimensional runs are lifted to d = 3); got {dg['gamma']}")
    if not 0 < float(dg["theta"]) < 1:
        raise ConfigError("theta must lie in (0, 1)")
    if not float(dg["beta"]) > d_eff / 2 + 1:
        raise ConfigError(f"beta must exceed d/2 + 1 = {d_eff / 2 + 1} for the residual-process norm")
    if not 0.8 < float(dg["c2"]) < 1:
        raise ConfigError("the snapshot rule delta = c1 * alpha^(-c2) needs 4/5 < c2 < 1")
    if not float(dg["c1"]) > 0:
        raise ConfigError("c1 must be positive")
    sv = cfg["solver"]
    if not 0 < float(sv["dt_fraction"]) <= 1:
        raise ConfigError("solver.dt_fraction must lie in (0, 1] (the stability rule is an upper bound)")
    hz = float(sv["horizon"])
    if not 0 < hz <= 1:
        raise ConfigError("solver.horizon must lie in (0, 1]")
    if sv["route"] not in ("auto", "sparse", "fft"):
        raise ConfigError("solver.route must be auto, sparse or fft")
    try:
        family_from_recipe(fam)
        field_from_spec(cfg["T0"], d, int(cfg["N"]))
        field_from_spec(dg["phi"], d, int(cfg["N"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid family or field definition: {exc}") from exc
    return ExperimentConfig(cfg)


def mu_warning(mu_value: float) -> str | None:
    if mu_value <= 1:
        msg = f"mu = {mu_value:.4g} <= 1; the model assumes mu in (1, inf)"
        warnings.warn(msg, stacklevel=2)
        return msg
    return None


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return validate_config(raw)
