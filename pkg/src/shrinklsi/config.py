"""Experiment configuration: a versioned JSON document, strictly validated.

Unknown keys are errors at every level so typos cannot silently fall back
to defaults.  The resolved object can build the model, grid and density
it describes; everything downstream is a pure function of the record plus
the seed, so identical configs reproduce identical runs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NotNormalized
from .geometry import builtin_model, from_table
from .measure import (
    bump_density,
    canonical_density,
    gaussian_density,
    import_field_csv,
    integrate,
    make_grid,
    normalize,
)

SCHEMA_VERSION = 1

_MODEL_KEYS = {"name", "n", "m", "k", "radius", "half_width", "pole_margin", "table"}
_GRID_KEYS = {"nodes", "rule", "truncation_radius", "box"}
_DENSITY_KEYS = {"kind", "center", "halfwidth", "power", "sigma2", "path", "tau", "scale"}
_DISCOUNT_KEYS = {"tol_c", "tol_w", "max_halvings"}
_PROBE_KEYS = {"surjectivity_targets", "jacobian_samples", "xi_bound", "y_bound"}
_FAMILY_KEYS = {"count", "amplitude"}
_TOLERANCE_KEYS = {
    "alpha_floor", "consistency", "divergence", "mass_ratio", "lambda_floor",
    "gap_floor", "shrinker_residual", "jensen", "deficit_floor",
    "recovery_factor", "frame_invariants", "canonical_residual",
}
_TOP_KEYS = {
    "schema", "model", "grid", "density", "tau", "epsilons", "discount",
    "boundary_condition", "check_dirichlet_sensitivity", "probes",
    "entropy_family", "growth_radii", "tolerances", "seed",
}

DEFAULT_TOLERANCES = {
    "alpha_floor": 1e-3,
    "consistency": 1e-3,
    "divergence": 1e-6,
    "mass_ratio": 1e-3,
    "lambda_floor": 1e-6,
    "gap_floor": 1e-6,
    "shrinker_residual": 1e-8,
    "jensen": 1e-12,
    "deficit_floor": 1e-6,
    "recovery_factor": 2.0,
    "frame_invariants": 1e-10,
    "canonical_residual": 2.5e-3,
}

DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "model": {"name": "plane", "n": 1},
    "grid": {"nodes": [6401], "rule": "trapezoid", "truncation_radius": 40.0, "box": None},
    "density": {"kind": "bump", "center": [0.5], "halfwidth": 3.0, "power": 4},
    "tau": 1.0,
    "epsilons": [0.5, 0.1, 0.01],
    "discount": {"tol_c": 1e-8, "tol_w": 1e-6, "max_halvings": 30},
    "boundary_condition": "neumann",
    "check_dirichlet_sensitivity": True,
    "probes": {"surjectivity_targets": 100, "jacobian_samples": 500,
               "xi_bound": 3.0, "y_bound": 2.0},
    "entropy_family": {"count": 20, "amplitude": 0.6},
    "growth_radii": [2.0, 3.0, 4.0, 6.0, 8.0, 10.0],
    "tolerances": dict(DEFAULT_TOLERANCES),
    "seed": 1234,
}


def _check_keys(section, allowed, where):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


def _merged(defaults, override, allowed, where):
    if override is None:
        return dict(defaults)
    if not isinstance(override, dict):
        raise ConfigError(f"{where} must be a mapping")
    _check_keys(override, allowed, where)
    out = dict(defaults)
    out.update(override)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration with builders for the objects it names."""

    raw: dict = field(repr=False)
    model_spec: dict
    grid_spec: dict
    density_spec: dict
    tau: float
    epsilons: tuple
    discount: dict
    boundary_condition: str
    check_dirichlet_sensitivity: bool
    probes: dict
    entropy_family: dict
    growth_radii: tuple
    tolerances: dict
    seed: int

    def config_hash(self):
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def build_model(self):
        spec = dict(self.model_spec)
        name = spec.pop("name")
        table = spec.pop("table", None)
        if name == "table":
            if table is None:
                raise ConfigError("model name 'table' requires a 'table' entry")
            return from_table(
                axes_nodes=[np.asarray(a, dtype=float) for a in table["axes"]],
                positions=np.asarray(table["positions"], dtype=float),
                periodic=table.get("periodic"),
                name="table",
            )
        try:
            return builtin_model(name, **spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model spec: {exc}") from exc

    def build_grid(self, model):
        try:
            return make_grid(
                model,
                self.grid_spec["nodes"],
                rule=self.grid_spec["rule"],
                truncation_radius=self.grid_spec["truncation_radius"],
                box=self.grid_spec["box"],
            )
        except Exception as exc:
            raise ConfigError(f"bad grid spec: {exc}") from exc

    def build_density(self, model, grid, auto_normalize=False):
        spec = dict(self.density_spec)
        kind = spec.pop("kind")
        scale = float(spec.pop("scale", 1.0))
        if kind == "canonical":
            fld = canonical_density(model, grid, spec.get("tau", self.tau)).field
        elif kind == "bump":
            center = list(spec.get("center", [0.0]))
            center = center + [0.0] * (model.ambient_dim - len(center))
            fld = bump_density(model, grid, center, spec.get("halfwidth", 2.0),
                               power=spec.get("power", 3), normalized=True)
        elif kind == "gaussian":
            fld = gaussian_density(model, grid, spec.get("sigma2", 1.0))
        elif kind == "csv":
            fld = import_field_csv(model, grid, spec["path"], name="csv-density")
        else:
            raise ConfigError(f"unknown density kind {kind!r}")
        if scale != 1.0:
            logs = None if fld.log_values is None else fld.log_values + math.log(scale)
            fld = fld.with_values(fld.values * scale, log_values=logs)
        mass = integrate(model, fld)
        if abs(mass - 1.0) > 1e-8:
            if not auto_normalize:
                raise NotNormalized(
                    f"density has dvol mass {mass!r}; pass --auto-normalize to rescale")
            fld = normalize(model, fld)
        return fld


def load_config(source):
    """Parse and validate a config mapping or JSON file path."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            with open(source) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config")
    schema = raw.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema!r} (expected {SCHEMA_VERSION})")

    model = _merged(DEFAULTS["model"], raw.get("model"), _MODEL_KEYS, "model")
    grid = _merged(DEFAULTS["grid"], raw.get("grid"), _GRID_KEYS, "grid")
    density = _merged(DEFAULTS["density"], raw.get("density"), _DENSITY_KEYS, "density")
    discount = _merged(DEFAULTS["discount"], raw.get("discount"), _DISCOUNT_KEYS, "discount")
    probes = _merged(DEFAULTS["probes"], raw.get("probes"), _PROBE_KEYS, "probes")
    family = _merged(DEFAULTS["entropy_family"], raw.get("entropy_family"),
                     _FAMILY_KEYS, "entropy_family")
    tolerances = _merged(DEFAULT_TOLERANCES, raw.get("tolerances"),
                         _TOLERANCE_KEYS, "tolerances")

    tau = float(raw.get("tau", DEFAULTS["tau"]))
    if not (tau > 0 and math.isfinite(tau)):
        raise ConfigError("tau must be a positive finite number")
    epsilons = tuple(float(e) for e in raw.get("epsilons", DEFAULTS["epsilons"]))
    if not epsilons or any(e <= 0 for e in epsilons):
        raise ConfigError("epsilons must be a non-empty list of positive numbers")
    bc = raw.get("boundary_condition", DEFAULTS["boundary_condition"])
    if bc not in ("neumann", "dirichlet"):
        raise ConfigError(f"boundary_condition must be neumann or dirichlet, got {bc!r}")
    radii = tuple(float(r) for r in raw.get("growth_radii", DEFAULTS["growth_radii"]))
    seed = int(raw.get("seed", DEFAULTS["seed"]))

    return ExperimentConfig(
        raw=raw,
        model_spec=model,
        grid_spec=grid,
        density_spec=density,
        tau=tau,
        epsilons=epsilons,
        discount=discount,
        boundary_condition=bc,
        check_dirichlet_sensitivity=bool(
            raw.get("check_dirichlet_sensitivity", DEFAULTS["check_dirichlet_sensitivity"])),
        probes=probes,
        entropy_family=family,
        growth_radii=radii,
        tolerances=tolerances,
        seed=seed,
    )
