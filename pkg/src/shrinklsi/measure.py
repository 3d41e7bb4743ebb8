"""Grids, sampled fields and Gaussian-weighted quadrature on chart domains.

Integrals over a model are tensor-product quadrature sums in chart
coordinates weighted by the area element ``sqrt(det g)``; grids are cut
at an ambient truncation radius (the exponential weight makes the
discarded tail negligible).  The module also provides the canonical
Gaussian density family and the polynomial-volume-growth diagnostic.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GridMismatch, InsufficientRadii, OutOfChart, ZeroMass
from .geometry import frames_on_params

__all__ = [
    "AxisSpec",
    "GridSpec",
    "DiscreteField",
    "CanonicalDensity",
    "GrowthCheck",
    "make_grid",
    "make_field",
    "field_from_ambient",
    "canonical_density",
    "gaussian_density",
    "bump_density",
    "integrate",
    "normalize",
    "growth_diagnostic",
    "grid_partials",
    "grid_second_partials",
    "grid_geometry",
    "node_index_for",
    "export_field_csv",
    "import_field_csv",
]

MIN_NODES_PER_AXIS = 8
DEFAULT_TRUNCATION = 40.0


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AxisSpec:
    """One uniformly spaced grid axis.  Periodic axes omit the right endpoint."""

    lo: float
    hi: float
    count: int
    periodic: bool = False

    def __post_init__(self):
        if self.count < MIN_NODES_PER_AXIS:
            raise GridMismatch(f"axis needs >= {MIN_NODES_PER_AXIS} nodes, got {self.count}")
        if not self.hi > self.lo:
            raise GridMismatch("axis upper bound must exceed lower bound")

    @property
    def spacing(self):
        span = self.hi - self.lo
        return span / self.count if self.periodic else span / (self.count - 1)

    def nodes(self):
        if self.periodic:
            return self.lo + self.spacing * np.arange(self.count)
        return np.linspace(self.lo, self.hi, self.count)


@dataclass(frozen=True)
class GridSpec:
    """Tensor-product chart grid with a quadrature rule and truncation radius."""

    axes: tuple
    rule: str = "trapezoid"
    truncation_radius: float = DEFAULT_TRUNCATION

    def __post_init__(self):
        if self.rule not in ("trapezoid", "simpson"):
            raise GridMismatch(f"unknown quadrature rule {self.rule!r}")
        if not self.truncation_radius > 0:
            raise GridMismatch("truncation radius must be positive")
        if self.rule == "simpson":
            for ax in self.axes:
                if not ax.periodic and ax.count % 2 == 0:
                    raise GridMismatch("simpson needs an odd node count per non-periodic axis")

    @property
    def shape(self):
        return tuple(ax.count for ax in self.axes)

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def periodic_flags(self):
        return tuple(ax.periodic for ax in self.axes)

    @property
    def spacings(self):
        return tuple(ax.spacing for ax in self.axes)

    def params_mesh(self):
        mats = np.meshgrid(*[ax.nodes() for ax in self.axes], indexing="ij")
        return np.stack(mats, axis=-1)

    def axis_weights(self, axis):
        ax = self.axes[axis]
        h = ax.spacing
        if ax.periodic:
            return np.full(ax.count, h)
        if self.rule == "trapezoid":
            w = np.full(ax.count, h)
            w[0] = w[-1] = 0.5 * h
            return w
        w = np.full(ax.count, 2.0 * h / 3.0)
        w[1::2] = 4.0 * h / 3.0
        w[0] = w[-1] = h / 3.0
        return w


def make_grid(model, counts, rule="trapezoid", truncation_radius=DEFAULT_TRUNCATION, box=None):
    """Grid over the model's parameter box (or an explicit sub-box)."""
    counts = [int(c) for c in np.atleast_1d(counts)]
    if len(counts) == 1 and model.n > 1:
        counts = counts * model.n
    if len(counts) != model.n:
        raise GridMismatch(f"{len(counts)} axis counts for an n={model.n} chart")
    box = list(model.param_box) if box is None else [tuple(b) for b in box]
    if len(box) != model.n:
        raise GridMismatch("box must give one (lo, hi) per chart axis")
    for (lo, hi), (mlo, mhi), per in zip(box, model.param_box, model.periodic):
        if not per and (lo < mlo - 1e-12 or hi > mhi + 1e-12):
            raise GridMismatch(f"grid box ({lo}, {hi}) escapes chart box ({mlo}, {mhi})")
    axes = tuple(
        AxisSpec(lo=float(lo), hi=float(hi), count=c, periodic=per)
        for (lo, hi), c, per in zip(box, counts, model.periodic)
    )
    return GridSpec(axes=axes, rule=rule, truncation_radius=float(truncation_radius))


def node_index_for(grid, param):
    """Index of the grid node nearest ``param`` (periodic axes wrap)."""
    param = np.asarray(param, dtype=float).reshape(-1)
    if param.size != grid.ndim:
        raise OutOfChart(f"parameter has {param.size} components, grid has {grid.ndim} axes")
    idx = []
    for a, ax in enumerate(grid.axes):
        j = int(round((param[a] - ax.lo) / ax.spacing))
        if ax.periodic:
            j %= ax.count
        elif j < 0 or j >= ax.count:
            raise OutOfChart(f"parameter {param} outside grid axis {a}")
        idx.append(j)
    return tuple(idx)


# ---------------------------------------------------------------------------
# stencil derivatives on grid arrays
# ---------------------------------------------------------------------------

def _axis_partial(values, h, axis, periodic):
    if periodic:
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)
    return np.gradient(values, h, axis=axis, edge_order=2)


def grid_partials(values, spacings, periodic):
    """Second-order partial derivatives along every axis; shape (*dims, naxes)."""
    values = np.asarray(values, dtype=float)
    parts = [
        _axis_partial(values, spacings[a], a, periodic[a])
        for a in range(len(periodic))
    ]
    return np.stack(parts, axis=-1)


def _axis_second(values, h, axis, periodic):
    if periodic:
        return (np.roll(values, -1, axis=axis) - 2.0 * values
                + np.roll(values, 1, axis=axis)) / h**2
    out = np.empty_like(values, dtype=float)
    v = np.moveaxis(values, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    # second-order one-sided second derivative at the edges
    o[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    o[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return out


def grid_second_partials(values, spacings, periodic):
    """Full matrix of second partials; shape (*dims, naxes, naxes)."""
    values = np.asarray(values, dtype=float)
    naxes = len(periodic)
    first = grid_partials(values, spacings, periodic)
    out = np.empty(values.shape + (naxes, naxes))
    for a in range(naxes):
        out[..., a, a] = _axis_second(values, spacings[a], a, periodic[a])
        for b in range(a + 1, naxes):
            cross = _axis_partial(first[..., a], spacings[b], b, periodic[b])
            out[..., a, b] = cross
            out[..., b, a] = cross
    return out


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Scalar field sampled on a chart grid.

    ``log_values`` is carried alongside for densities whose logarithm is
    known analytically (gradients of the log are then exact on quadratic
    exponents and never see underflow).
    """

    grid: GridSpec
    values: np.ndarray
    support_radius: float
    log_values: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values, self.grid))
        if self.log_values is not None:
            object.__setattr__(self, "log_values", _freeze(self.log_values, self.grid))

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(repr(self.grid).encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()[:16]

    def with_values(self, values, log_values=None, name=None):
        return DiscreteField(
            grid=self.grid,
            values=values,
            support_radius=self.support_radius,
            log_values=log_values,
            name=self.name if name is None else name,
        )


def _freeze(arr, grid):
    arr = np.array(arr, dtype=float, copy=True)
    if arr.shape != grid.shape:
        raise GridMismatch(f"values shape {arr.shape} does not match grid {grid.shape}")
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=32)
def grid_geometry(model, grid):
    """Cached frame and quadrature data over a full grid.

    Keys are the model object (identity) and the grid spec (by value), so
    repeated integrals over the same discretization reuse one evaluation.
    """
    params = grid.params_mesh()
    data = frames_on_params(model, params)
    axis_w = grid.axis_weights(0)
    for a in range(1, grid.ndim):
        axis_w = np.multiply.outer(axis_w, grid.axis_weights(a))
    mask = data["radius"] <= grid.truncation_radius * (1.0 + 1e-12)
    quad = axis_w * data["sqrt_det_g"] * mask
    data["axis_weights"] = axis_w
    data["truncation_mask"] = mask
    data["quad_weights"] = quad
    data["gamma_log"] = (
        -0.5 * model.n * math.log(4.0 * math.pi) - 0.25 * data["radius"] ** 2
    )
    data["gamma"] = np.exp(data["gamma_log"])
    return data


def _support_radius(model, grid, values):
    geo = grid_geometry(model, grid)
    mask = np.asarray(values) != 0.0
    if not mask.any():
        return 0.0
    return float(np.max(geo["radius"][mask]))


def make_field(model, grid, values, log_values=None, name=""):
    """Wrap grid samples as a DiscreteField (support radius from |x|)."""
    return DiscreteField(
        grid=grid,
        values=np.asarray(values, dtype=float),
        support_radius=_support_radius(model, grid, values),
        log_values=log_values,
        name=name,
    )


def field_from_ambient(model, grid, fn, name=""):
    """Sample ``fn(x)`` of the ambient position over the grid."""
    geo = grid_geometry(model, grid)
    return make_field(model, grid, fn(geo["position"]), name=name)


@dataclass(frozen=True)
class CanonicalDensity:
    """The Gaussian reference density at scale tau and its additive constant.

    ``values = (4 pi tau)^(-n/2) exp(-|x|^2 / (4 tau))`` sampled on the grid;
    ``alpha = n + (n/2) log(4 pi tau)``.  At ``tau = 1`` this is the weight
    of the Gaussian measure ``dgamma``.
    """

    tau: float
    alpha: float
    field: DiscreteField


def canonical_density(model, grid, tau=1.0):
    if not tau > 0:
        raise GridMismatch("tau must be positive")
    geo = grid_geometry(model, grid)
    logv = (-0.5 * model.n * math.log(4.0 * math.pi * tau)
            - geo["radius"] ** 2 / (4.0 * tau))
    fld = make_field(model, grid, np.exp(logv), log_values=logv,
                     name=f"canonical(tau={tau:g})")
    alpha = model.n + 0.5 * model.n * math.log(4.0 * math.pi * tau)
    return CanonicalDensity(tau=float(tau), alpha=alpha, field=fld)


def gaussian_density(model, grid, sigma2, name=None):
    """Centered Gaussian of variance sigma2 w.r.t. ambient distance."""
    if not sigma2 > 0:
        raise GridMismatch("sigma2 must be positive")
    geo = grid_geometry(model, grid)
    logv = (-0.5 * model.n * math.log(2.0 * math.pi * sigma2)
            - geo["radius"] ** 2 / (2.0 * sigma2))
    return make_field(model, grid, np.exp(logv), log_values=logv,
                      name=name or f"gaussian(s2={sigma2:g})")


def bump_density(model, grid, center, halfwidth, power=3, normalized=True):
    """Compactly supported C^2 bump ``(1 - d^2/hw^2)^power`` around an ambient point."""
    geo = grid_geometry(model, grid)
    center = np.asarray(center, dtype=float)
    d2 = np.sum((geo["position"] - center) ** 2, axis=-1) / halfwidth**2
    base = np.clip(1.0 - d2, 0.0, None)
    vals = base**power
    with np.errstate(divide="ignore"):
        logv = power * np.log(base)
    fld = make_field(model, grid, vals, log_values=logv, name="bump")
    return normalize(model, fld) if normalized else fld


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _check_compatible(model, fld):
    if fld.grid.ndim != model.n:
        raise GridMismatch(f"field grid has {fld.grid.ndim} axes, model chart has {model.n}")
    if fld.grid.periodic_flags != tuple(model.periodic):
        raise GridMismatch("field grid periodicity does not match the chart")


def integrate(model, fld, weight="dvol"):
    """Integral of the field over the model (weight ``dvol`` or ``dgamma``)."""
    _check_compatible(model, fld)
    geo = grid_geometry(model, fld.grid)
    w = geo["quad_weights"]
    if weight == "dgamma":
        w = w * geo["gamma"]
    elif weight != "dvol":
        raise GridMismatch(f"unknown weight {weight!r}")
    return float(np.sum(w * fld.values))


def normalize(model, fld, weight="dvol"):
    """Scale the field to unit integral for the requested weight."""
    mass = integrate(model, fld, weight=weight)
    if not math.isfinite(mass) or mass <= 1e-300:
        raise ZeroMass(f"cannot normalize a field of mass {mass}")
    logs = None if fld.log_values is None else fld.log_values - math.log(mass)
    return DiscreteField(
        grid=fld.grid,
        values=fld.values / mass,
        support_radius=fld.support_radius,
        log_values=logs,
        name=fld.name,
    )


# ---------------------------------------------------------------------------
# growth diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthCheck:
    """Extrinsic-ball volume and sup|H| growth fits ``c * r^k``, ``|H| <= c r^l``."""

    radii: tuple
    volumes: tuple
    exponent_volume: float
    coeff_volume: float
    fit_residual_volume: float
    max_h: tuple
    exponent_h: float
    coeff_h: float
    fit_residual_h: float
    volumes_monotone: bool
    h_flat: bool


def _loglog_fit(r, y):
    lr, ly = np.log(r), np.log(y)
    A = np.stack([lr, np.ones_like(lr)], axis=1)
    sol, _, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.max(np.abs(A @ sol - ly)))
    return float(sol[0]), float(math.exp(sol[1])), resid


def growth_diagnostic(model, radii, grid):
    """Fit extrinsic volume and sup|H| growth over increasing ball radii."""
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise InsufficientRadii("need at least three radii")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise InsufficientRadii("radii must be strictly increasing")
    if radii[-1] > grid.truncation_radius:
        raise InsufficientRadii("largest radius exceeds the truncation radius")
    geo = grid_geometry(model, grid)
    h_norm = np.linalg.norm(geo["mean_curvature"], axis=-1)
    volumes, max_h = [], []
    for r in radii:
        mask = geo["radius"] <= r
        volumes.append(float(np.sum(geo["quad_weights"] * mask)))
        max_h.append(float(np.max(h_norm[mask])) if mask.any() else 0.0)
    k, cv, rv = _loglog_fit(np.array(radii), np.maximum(volumes, 1e-300))
    h_flat = max(max_h) < 1e-12
    if h_flat:
        l, ch, rh = 0.0, 0.0, 0.0
    else:
        l, ch, rh = _loglog_fit(np.array(radii), np.maximum(max_h, 1e-300))
    return GrowthCheck(
        radii=tuple(radii),
        volumes=tuple(volumes),
        exponent_volume=k,
        coeff_volume=cv,
        fit_residual_volume=rv,
        max_h=tuple(max_h),
        exponent_h=l,
        coeff_h=ch,
        fit_residual_h=rh,
        volumes_monotone=bool(all(b >= a - 1e-12 for a, b in zip(volumes, volumes[1:]))),
        h_flat=h_flat,
    )


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def export_field_csv(fld, path):
    """Write (param coordinates, value) rows in C order, 17 significant digits."""
    grid = fld.grid
    params = grid.params_mesh().reshape(-1, grid.ndim)
    vals = fld.values.reshape(-1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"param_{a}" for a in range(grid.ndim)] + ["value"])
        for row, v in zip(params, vals):
            writer.writerow([f"{c:.17g}" for c in row] + [f"{v:.17g}"])


def import_field_csv(model, grid, path, name=""):
    """Read a field written by :func:`export_field_csv` back onto ``grid``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != grid.ndim + 1:
            raise GridMismatch("CSV column count does not match the grid")
        rows = [[float(c) for c in row] for row in reader]
    if len(rows) != int(np.prod(grid.shape)):
        raise GridMismatch("CSV row count does not match the grid")
    arr = np.array(rows)
    expect = grid.params_mesh().reshape(-1, grid.ndim)
    if not np.allclose(arr[:, : grid.ndim], expect, atol=1e-9):
        raise GridMismatch("CSV parameter columns do not match the grid nodes")
    values = arr[:, -1].reshape(grid.shape)
    return make_field(model, grid, values, name=name)
