"""Certificates for the transport map that forces the sharp constant.

The map sends ``(x, y)`` with ``x`` on the model and ``y`` normal at ``x``
to ``grad u(x) + y``, restricted to the set where
``M = Hess u - <II, y>`` is positive semidefinite.  Three numerical
certificates are produced:

* surjectivity probes: for a target ``xi`` the global minimizer of
  ``u - <x, xi>`` recovers ``xi`` through the map;
* the Jacobian determinant bound
  ``det M <= f exp(|Phi|^2/4 - |2H + y|^2/4 + |x_nor/2 + H|^2 + alpha - n)``
  sampled over the in-set region;
* the pushforward mass ratio
  ``(4 pi)^(-n/2) e^(alpha - n) int f exp(|x_nor/2 + H|^2) dvol >= 1``
  (the normal-fiber Gaussian integral is carried out in closed form).

Hessians are covariant: chart second derivatives minus the Christoffel
contraction, the convention validated by ``Hess u0 - <II, x_nor> = g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import MinimizerOnBoundary
from .measure import grid_geometry, grid_partials, grid_second_partials

__all__ = [
    "TransportCertificate",
    "JacobianCheck",
    "JacobianSample",
    "SurjectivityProbe",
    "covariant_hessian",
    "normal_frame",
    "jacobian_check",
    "sample_offsets",
    "surjectivity_probe",
    "surjectivity_sweep",
    "mass_inequality",
    "canonical_equality_witness",
    "certify",
]


def covariant_hessian(model, u_field):
    """Covariant Hessian array ``(*dims, n, n)`` of a sampled function.

    Christoffel symbols come from stencil derivatives of the induced
    metric over the same grid, so the construction needs nothing beyond
    the chart evaluations already cached for quadrature.
    """
    grid = u_field.grid
    geo = grid_geometry(model, grid)
    spac, per = grid.spacings, grid.periodic_flags
    ndim = grid.ndim
    d1 = grid_partials(u_field.values, spac, per)
    d2 = grid_second_partials(u_field.values, spac, per)
    g = geo["metric"]
    dg = np.empty(grid.shape + (ndim, ndim, ndim))
    for a in range(ndim):
        for b in range(a, ndim):
            parts = grid_partials(g[..., a, b], spac, per)
            dg[..., a, b, :] = parts
            dg[..., b, a, :] = parts
    gamma_low = 0.5 * (
        np.einsum("...bca->...cab", dg)
        + np.einsum("...acb->...cab", dg)
        - np.einsum("...abc->...cab", dg)
    )
    gamma = np.einsum("...kc,...cab->...kab", geo["metric_inv"], gamma_low)
    return d2 - np.einsum("...kab,...k->...ab", gamma, d1)


def normal_frame(model, geo, idx):
    """Orthonormal basis of the normal space at a grid node, deterministic sign."""
    jac = geo["jacobian"][idx]              # (n+m, n)
    basis = sla.null_space(jac.T)           # (n+m, m)
    for col in range(basis.shape[1]):
        lead = np.argmax(np.abs(basis[:, col]))
        if basis[lead, col] < 0:
            basis[:, col] = -basis[:, col]
    return basis


def _interior_mask(grid, margin=1, radius_fraction=0.98, geo=None):
    mask = np.ones(grid.shape, dtype=bool)
    for a, per in enumerate(grid.periodic_flags):
        if per:
            continue
        sl = [slice(None)] * grid.ndim
        sl[a] = slice(0, margin)
        mask[tuple(sl)] = False
        sl[a] = slice(grid.shape[a] - margin, grid.shape[a])
        mask[tuple(sl)] = False
    if geo is not None:
        mask &= geo["radius"] <= radius_fraction * grid.truncation_radius
    return mask


# ---------------------------------------------------------------------------
# Jacobian determinant bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JacobianSample:
    node: tuple
    y: tuple
    in_u: bool
    det: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class JacobianCheck:
    samples: tuple
    in_u_count: int
    violations: int
    skipped: int
    worst_ratio: float
    eig_tol: float
    allowance: float


def sample_offsets(model, grid, count, rng, y_bound=2.0):
    """Random (interior node, normal offset) pairs for the Jacobian check."""
    geo = grid_geometry(model, grid)
    interior = np.argwhere(_interior_mask(grid, margin=1, geo=geo))
    picks = interior[rng.integers(0, len(interior), size=count)]
    out = []
    for row in picks:
        idx = tuple(int(v) for v in row)
        basis = normal_frame(model, geo, idx)
        coeffs = rng.uniform(-y_bound, y_bound, size=basis.shape[1])
        out.append((idx, basis @ coeffs))
    return out


def jacobian_check(model, u_field, samples, alpha, rho_field,
                   eig_tol=1e-8, rel_slack=1e-6, h2_coeff=25.0):
    """Check ``0 <= det M <= bound`` on every sample classified inside the set.

    ``M`` is the covariant Hessian of ``u`` minus ``<II, y>``; the
    determinant and the semidefiniteness test are taken against the metric
    (orthonormal-frame convention).  The tolerance is ``rel_slack``
    relative plus an absolute ``h2_coeff * h^2`` discretization allowance.
    Samples too close to a chart edge for interior stencils are skipped
    and counted.
    """
    grid = u_field.grid
    geo = grid_geometry(model, grid)
    hess = covariant_hessian(model, u_field)
    d1 = grid_partials(u_field.values, grid.spacings, grid.periodic_flags)
    h_max = max(grid.spacings)
    allowance = h2_coeff * h_max**2
    stencil_ok = _interior_mask(grid, margin=1)
    records = []
    skipped = 0
    violations = 0
    in_u_count = 0
    worst = 0.0
    n = model.n
    for idx, y in samples:
        idx = tuple(idx)
        if not stencil_ok[idx]:
            skipped += 1
            continue
        y = np.asarray(y, dtype=float)
        g = geo["metric"][idx]
        m_mat = hess[idx] - np.einsum("abi,i->ab", geo["second_fundamental"][idx], y)
        eigs = sla.eigh(m_mat, g, eigvals_only=True)
        scale = 1.0 + float(np.max(np.abs(eigs)))
        in_u = eigs[0] >= -eig_tol * scale
        det = float(np.prod(eigs))
        ok = True
        bound = math.inf
        if in_u:
            in_u_count += 1
            grad_amb = geo["jacobian"][idx] @ (geo["metric_inv"][idx] @ d1[idx])
            phi = grad_amb + y
            two_h_y = 2.0 * geo["mean_curvature"][idx] + y
            defect = geo["x_nor"][idx] / 2.0 + geo["mean_curvature"][idx]
            expo = (phi @ phi) / 4.0 - (two_h_y @ two_h_y) / 4.0 \
                + (defect @ defect) + alpha - n
            bound = float(rho_field.values[idx] * math.exp(expo))
            ok = det <= bound * (1.0 + rel_slack) + allowance
            if bound > 0:
                worst = max(worst, det / bound)
            if not ok:
                violations += 1
        records.append(JacobianSample(
            node=idx, y=tuple(y), in_u=bool(in_u),
            det=det, bound=bound, ok=bool(ok)))
    return JacobianCheck(
        samples=tuple(records),
        in_u_count=in_u_count,
        violations=violations,
        skipped=skipped,
        worst_ratio=worst,
        eig_tol=eig_tol,
        allowance=allowance,
    )


def canonical_equality_witness(model, grid):
    """det and bound of the Jacobian inequality for the canonical pair at the
    node nearest the origin with zero normal offset; they agree there."""
    from .measure import canonical_density, make_field

    geo = grid_geometry(model, grid)
    ft = canonical_density(model, grid, 1.0)
    u0 = make_field(model, grid, 0.5 * geo["radius"] ** 2, name="u0")
    idx = np.unravel_index(int(np.argmin(geo["radius"])), grid.shape)
    y = np.zeros(model.ambient_dim)
    check = jacobian_check(model, u0, [(idx, y)], ft.alpha, ft.field,
                           h2_coeff=0.0, rel_slack=0.0)
    if check.skipped:
        raise MinimizerOnBoundary("origin node too close to the grid edge")
    sample = check.samples[0]
    return sample.det, sample.bound


# ---------------------------------------------------------------------------
# surjectivity probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurjectivityProbe:
    xi: tuple
    node: tuple
    position: tuple
    recovery_error: float
    hessian_psd: bool
    interior: bool


def _probe(model, u_field, xi, geo, hess, d1, interior, psd_tol=1e-8):
    xi = np.asarray(xi, dtype=float)
    q = u_field.values - geo["position"] @ xi
    idx = np.unravel_index(int(np.argmin(q)), u_field.grid.shape)
    is_interior = bool(interior[idx])
    jac = geo["jacobian"][idx]
    proj = jac @ (geo["metric_inv"][idx] @ (jac.T @ xi))
    y = xi - proj
    grad_amb = jac @ (geo["metric_inv"][idx] @ d1[idx])
    err = float(np.linalg.norm(grad_amb + y - xi))
    m_mat = hess[idx] - np.einsum("abi,i->ab", geo["second_fundamental"][idx], y)
    eigs = sla.eigh(m_mat, geo["metric"][idx], eigvals_only=True)
    psd = bool(eigs[0] >= -psd_tol * (1.0 + float(np.max(np.abs(eigs)))))
    return SurjectivityProbe(
        xi=tuple(xi),
        node=tuple(int(v) for v in idx),
        position=tuple(geo["position"][idx]),
        recovery_error=err,
        hessian_psd=psd,
        interior=is_interior,
    )


def surjectivity_probe(model, u_field, xi, psd_tol=1e-8):
    """Recover one ambient target through the transport map.

    Minimizes ``u - <x, xi>`` over the grid, picks the normal component of
    the target at the minimizer and reports the recovery error
    ``|grad u + y - xi|``.  Raises MinimizerOnBoundary when the minimizer
    is not strictly interior (the probe is then invalid; enlarge the grid).
    """
    geo = grid_geometry(model, u_field.grid)
    hess = covariant_hessian(model, u_field)
    d1 = grid_partials(u_field.values, u_field.grid.spacings, u_field.grid.periodic_flags)
    interior = _interior_mask(u_field.grid, margin=1, geo=geo)
    rec = _probe(model, u_field, xi, geo, hess, d1, interior, psd_tol)
    if not rec.interior:
        raise MinimizerOnBoundary(
            f"minimizer for target {xi} landed on the grid boundary")
    return rec


def surjectivity_sweep(model, u_field, targets, psd_tol=1e-8):
    """Probe many targets; boundary hits are recorded rather than raised."""
    geo = grid_geometry(model, u_field.grid)
    hess = covariant_hessian(model, u_field)
    d1 = grid_partials(u_field.values, u_field.grid.spacings, u_field.grid.periodic_flags)
    interior = _interior_mask(u_field.grid, margin=1, geo=geo)
    return tuple(_probe(model, u_field, xi, geo, hess, d1, interior, psd_tol)
                 for xi in targets)


# ---------------------------------------------------------------------------
# mass inequality
# ---------------------------------------------------------------------------

def mass_inequality(model, rho_field, alpha):
    """Pushforward mass ratio; at least 1, exactly 1 for the canonical pair.

    The normal-fiber Gaussian integral of the full chain is evaluated in
    closed form, which reduces the ambient-dimension prefactor to
    ``(4 pi)^(-n/2)`` and leaves a pure surface integral.
    """
    geo = grid_geometry(model, rho_field.grid)
    defect = geo["x_nor"] / 2.0 + geo["mean_curvature"]
    dsq = np.sum(defect * defect, axis=-1)
    w = geo["quad_weights"] * rho_field.values
    support = w > 0.0
    shift = float(np.max(dsq[support])) if support.any() else 0.0
    integral = float(np.sum(w * np.exp(dsq - shift)))
    log_ratio = (-0.5 * model.n * math.log(4.0 * math.pi)
                 + alpha - model.n + shift + math.log(integral))
    return math.exp(log_ratio)


# ---------------------------------------------------------------------------
# aggregate certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportCertificate:
    """Joint record of the three transport checks for one solved case."""

    jacobian: JacobianCheck
    probes: tuple
    max_recovery_error: float
    all_minimizers_interior: bool
    mass_ratio: float

    def summary(self):
        return {
            "jacobian_in_u": self.jacobian.in_u_count,
            "jacobian_violations": self.jacobian.violations,
            "jacobian_skipped": self.jacobian.skipped,
            "jacobian_worst_ratio": self.jacobian.worst_ratio,
            "probe_count": len(self.probes),
            "max_recovery_error": self.max_recovery_error,
            "all_minimizers_interior": self.all_minimizers_interior,
            "mass_ratio": self.mass_ratio,
        }


def certify(model, solution, pert, rng, jacobian_samples=500, probe_targets=100,
            xi_bound=3.0, y_bound=2.0, eig_tol=1e-8, rel_slack=1e-6, h2_coeff=25.0):
    """Run all transport checks for a solved case."""
    u = solution.u
    wanted = jacobian_samples
    collected = []
    check = None
    for _ in range(16):  # redraw until enough samples classify inside the set
        collected += sample_offsets(model, u.grid, wanted, rng, y_bound)
        check = jacobian_check(model, u, collected, solution.alpha, pert.field,
                               eig_tol=eig_tol, rel_slack=rel_slack, h2_coeff=h2_coeff)
        if check.in_u_count >= wanted:
            break
    targets = rng.uniform(-xi_bound, xi_bound, size=(probe_targets, model.ambient_dim))
    probes = surjectivity_sweep(model, u, targets)
    max_err = max((p.recovery_error for p in probes), default=0.0)
    all_interior = all(p.interior for p in probes)
    ratio = mass_inequality(model, pert.field, solution.alpha)
    return TransportCertificate(
        jacobian=check,
        probes=probes,
        max_recovery_error=max_err,
        all_minimizers_interior=all_interior,
        mass_ratio=ratio,
    )
