"""Integral functionals of a density and their log-Sobolev deficits.

For a density ``f`` with unit ``dvol`` mass on a model the report stores

* ``dirichlet``       ``int |grad f|^2 / f dvol``
* ``entropy``         ``int f log f dvol``
* ``curvature``       ``int |H|^2 f dvol``
* ``shrinker_defect`` ``int f |x_nor/(2 tau) + H|^2 dvol``
* ``jensen``          ``log int f exp(tau |x_nor/(2 tau) + H|^2) dvol``

and combines them (with the scale weight ``tau``) into two signed
deficits: ``deficit_sharp`` is nonnegative on self-shrinkers, and
``deficit_general`` adds the defect/Jensen correction and is nonnegative
on any submanifold with polynomial growth.  Nonnegativity of a deficit is
the inequality; the correction ``tau * defect - jensen`` is always <= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MismatchedInputs, NegativeValues, NotNormalized
from .measure import grid_geometry, grid_partials, integrate

__all__ = ["DeficitReport", "deficit", "gaussian_form_deficit", "consistency_check"]

_FLOOR_SCALE = 1e-14
_NORMALIZED_TOL = 1e-8


def log_gradient_sq(model, fld):
    """Pointwise ``|grad log f|^2_g`` with a positivity floor.

    Uses ``log_values`` when the field carries them (stencils of the log
    are exact for Gaussian-type exponents); components whose log stencil
    touches the zero set fall back to ``(grad f)/f``.  Nodes with
    ``f <= floor`` contribute zero.
    """
    geo = grid_geometry(model, fld.grid)
    spacings = fld.grid.spacings
    periodic = fld.grid.periodic_flags
    vals = fld.values
    floor = _FLOOR_SCALE * float(np.max(vals)) if np.max(vals) > 0 else 0.0
    if fld.log_values is not None:
        logs = fld.log_values
    else:
        with np.errstate(divide="ignore"):
            logs = np.log(vals)
    with np.errstate(invalid="ignore"):
        dlog = grid_partials(logs, spacings, periodic)
    dval = grid_partials(vals, spacings, periodic)
    safe_div = np.where(vals > floor, vals, 1.0)
    fallback = dval / safe_div[..., None]
    dlog = np.where(np.isfinite(dlog), dlog, fallback)
    gradsq = np.einsum("...ab,...a,...b->...", geo["metric_inv"], dlog, dlog)
    mask = vals > floor
    return np.where(mask, gradsq, 0.0), dlog, int(np.sum(~mask))


def _defect_sq(geo, tau):
    v = geo["x_nor"] / (2.0 * tau) + geo["mean_curvature"]
    return np.sum(v * v, axis=-1)


def _entropy_integrand(vals, logs):
    with np.errstate(invalid="ignore"):
        out = vals * logs
    return np.where(vals > 0.0, out, 0.0)


@dataclass(frozen=True)
class DeficitReport:
    """All integral terms of the weighted log-Sobolev functionals."""

    model_name: str
    tau: float
    mass: float
    dirichlet: float
    entropy: float
    curvature: float
    shrinker_defect: float
    jensen: float
    constant: float
    deficit_sharp: float
    deficit_general: float
    jensen_correction: float
    floor_nodes: int
    density_fingerprint: str

    def terms(self):
        return {
            "dirichlet": self.dirichlet,
            "entropy": self.entropy,
            "curvature": self.curvature,
            "shrinker_defect": self.shrinker_defect,
            "jensen": self.jensen,
            "constant": self.constant,
            "deficit_sharp": self.deficit_sharp,
            "deficit_general": self.deficit_general,
            "jensen_correction": self.jensen_correction,
        }


def deficit(model, fld, tau=1.0, check_normalized=True):
    """Evaluate every deficit term for a unit-mass density.

    ``deficit_sharp = tau*dirichlet - entropy + tau*curvature - constant``
    with ``constant = n + (n/2) log(4 pi tau)``; ``deficit_general`` adds
    ``jensen - tau*shrinker_defect``.  Raises NotNormalized unless
    ``int f dvol = 1`` within 1e-8, NegativeValues for signed input.
    """
    if np.min(fld.values) < 0.0:
        raise NegativeValues("density has negative samples")
    mass = integrate(model, fld)
    if check_normalized and abs(mass - 1.0) > _NORMALIZED_TOL:
        raise NotNormalized(f"int f dvol = {mass!r}; normalize first (or pass a normalized field)")
    geo = grid_geometry(model, fld.grid)
    w = geo["quad_weights"]
    vals = fld.values
    if fld.log_values is not None:
        logs = fld.log_values
    else:
        with np.errstate(divide="ignore"):
            logs = np.log(vals)

    gradsq, _, floor_nodes = log_gradient_sq(model, fld)
    dirichlet = float(np.sum(w * vals * gradsq))
    entropy_term = float(np.sum(w * _entropy_integrand(vals, logs)))
    h_sq = np.sum(geo["mean_curvature"] ** 2, axis=-1)
    curvature = float(np.sum(w * vals * h_sq))
    dsq = _defect_sq(geo, tau)
    defect = float(np.sum(w * vals * dsq))

    # log int f e^(tau dsq) with a max shift over the support
    expo = tau * dsq
    support = (w * vals) > 0.0
    shift = float(np.max(expo[support])) if support.any() else 0.0
    jensen = shift + math.log(float(np.sum(w * vals * np.exp(expo - shift))))

    constant = model.n + 0.5 * model.n * math.log(4.0 * math.pi * tau)
    sharp = tau * dirichlet - entropy_term + tau * curvature - constant
    correction = tau * defect - jensen
    return DeficitReport(
        model_name=model.name,
        tau=float(tau),
        mass=mass,
        dirichlet=dirichlet,
        entropy=entropy_term,
        curvature=curvature,
        shrinker_defect=defect,
        jensen=jensen,
        constant=constant,
        deficit_sharp=sharp,
        deficit_general=sharp - correction,
        jensen_correction=correction,
        floor_nodes=floor_nodes,
        density_fingerprint=fld.fingerprint(),
    )


def gaussian_form_deficit(model, phi, check_normalized=False):
    """Deficit of the Gaussian-weighted form.

    Returns ``int |grad phi|^2/phi dgamma - int phi log phi dgamma
    + mass log mass`` with ``mass = int phi dgamma``; the last term is the
    normalization correction and vanishes for unit-mass input.  The value
    is nonnegative on self-shrinkers.
    """
    if np.min(phi.values) < 0.0:
        raise NegativeValues("density has negative samples")
    geo = grid_geometry(model, phi.grid)
    wg = geo["quad_weights"] * geo["gamma"]
    mass = float(np.sum(wg * phi.values))
    if check_normalized and abs(mass - 1.0) > _NORMALIZED_TOL:
        raise NotNormalized(f"int phi dgamma = {mass!r}")
    if mass <= 0.0:
        raise NegativeValues("phi carries no Gaussian-weighted mass")
    vals = phi.values
    if phi.log_values is not None:
        logs = phi.log_values
    else:
        with np.errstate(divide="ignore"):
            logs = np.log(vals)
    gradsq, _, _ = log_gradient_sq(model, phi)
    dirichlet = float(np.sum(wg * vals * gradsq))
    entropy_term = float(np.sum(wg * _entropy_integrand(vals, logs)))
    return dirichlet - entropy_term + mass * math.log(mass)


def consistency_check(report, solution):
    """Residual of the integrated drift-diffusion identity.

    The equation satisfied by the solved pair, integrated against the
    vanishing total divergence, forces
    ``tau*dirichlet - entropy + tau*curvature - tau*defect = alpha``;
    the returned scalar is the absolute mismatch between the quadrature of
    the left side (from ``report``) and the solver's ``alpha``.
    """
    if report.density_fingerprint != solution.perturbed_fingerprint:
        raise MismatchedInputs(
            "deficit report and solver output were built from different densities")
    if abs(report.tau - solution.tau) > 0.0:
        raise MismatchedInputs("deficit report and solver output use different tau")
    tau = report.tau
    lhs = (tau * report.dirichlet - report.entropy + tau * report.curvature
           - tau * report.shrinker_defect)
    return abs(lhs - solution.alpha)
