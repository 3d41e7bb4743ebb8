"""Parametrized submanifolds of Euclidean space and their pointwise geometry.

A model is an explicit chart ``U subset R^n -> R^(n+m)`` together with the
data needed to evaluate first and second fundamental forms at any
parameter: tangent basis, induced metric, tangential/normal splitting of
the position vector, second fundamental form and the mean curvature
vector (trace convention, so the self-shrinker equation reads exactly
``H + x_nor/2 = 0``).

Built-in models (plane, round sphere, round cylinder) carry closed-form
chart derivatives; user charts are differentiated with nested central
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfChart, RankDeficientChart

__all__ = [
    "ManifoldModel",
    "GeometryFrame",
    "TangentialGradient",
    "plane",
    "sphere",
    "cylinder",
    "from_callable",
    "from_table",
    "builtin_model",
    "frame_at",
    "frames_on_params",
    "shrinker_residual",
    "tangential_gradient",
]

_RANK_TOL = 1e-10


# ---------------------------------------------------------------------------
# closed-form charts: every ambient coordinate is a sum of monomials
#     coeff * prod_k factor(params[..., axis_k])
# with factors cos/sin/id of a single axis.  Planes, round spheres and
# round cylinders are all of this shape, and the factor calculus gives
# exact first and second derivatives.
# ---------------------------------------------------------------------------

_FACTOR_VALUE = {
    "cos": np.cos,
    "sin": np.sin,
    "id": lambda t: t,
    "one": lambda t: np.ones_like(t),
}

# d/dt factor = sign * replacement
_FACTOR_DERIV = {
    "cos": ("sin", -1.0),
    "sin": ("cos", 1.0),
    "id": ("one", 1.0),
    "one": (None, 0.0),
}


def _mono_derivative(mono, axis):
    """Differentiate one (coeff, factors) monomial along a parameter axis."""
    coeff, factors = mono
    out = []
    for k, (ax, kind) in enumerate(factors):
        if ax != axis:
            continue
        repl, sign = _FACTOR_DERIV[kind]
        if repl is None:
            continue
        new = list(factors)
        new[k] = (ax, repl)
        out.append((coeff * sign, tuple(new)))
    return out


def _mono_eval(monos, params):
    if not monos:
        return np.zeros(params.shape[:-1])
    total = np.zeros(params.shape[:-1])
    for coeff, factors in monos:
        term = np.full(params.shape[:-1], coeff)
        for ax, kind in factors:
            term = term * _FACTOR_VALUE[kind](params[..., ax])
        total = total + term
    return total


class _TrigChart:
    """Exact chart built from trigonometric/linear monomials."""

    kind = "analytic_builtin"

    def __init__(self, n, coords):
        # coords: per ambient coordinate, a list of (coeff, factors)
        self.n = n
        self.ambient_dim = len(coords)
        self._value = [list(c) for c in coords]
        self._jac = [
            [sum((_mono_derivative(m, a) for m in c), []) for a in range(n)]
            for c in coords
        ]
        self._hess = [
            [
                [sum((_mono_derivative(m, b) for m in self._jac[i][a]), [])
                 for b in range(n)]
                for a in range(n)
            ]
            for i in range(self.ambient_dim)
        ]

    def position(self, params):
        params = np.asarray(params, dtype=float)
        out = np.empty(params.shape[:-1] + (self.ambient_dim,))
        for i, monos in enumerate(self._value):
            out[..., i] = _mono_eval(monos, params)
        return out

    def jacobian(self, params):
        params = np.asarray(params, dtype=float)
        out = np.empty(params.shape[:-1] + (self.ambient_dim, self.n))
        for i in range(self.ambient_dim):
            for a in range(self.n):
                out[..., i, a] = _mono_eval(self._jac[i][a], params)
        return out

    def hessian(self, params):
        params = np.asarray(params, dtype=float)
        out = np.empty(params.shape[:-1] + (self.ambient_dim, self.n, self.n))
        for i in range(self.ambient_dim):
            for a in range(self.n):
                for b in range(self.n):
                    out[..., i, a, b] = _mono_eval(self._hess[i][a][b], params)
        return out


class _CallableChart:
    """User chart from a position callable; derivatives by central differences.

    ``step`` is the finite-difference step per axis, chosen by the model
    builder from the parameter-box diameter.
    """

    kind = "user_numeric"

    def __init__(self, fn, n, ambient_dim, step):
        self.n = n
        self.ambient_dim = ambient_dim
        self._fn = fn
        self.step = np.asarray(step, dtype=float)

    def position(self, params):
        params = np.asarray(params, dtype=float)
        out = np.asarray(self._fn(params), dtype=float)
        if out.shape != params.shape[:-1] + (self.ambient_dim,):
            raise OutOfChart(
                f"chart callable returned shape {out.shape}, expected "
                f"{params.shape[:-1] + (self.ambient_dim,)}"
            )
        return out

    def _shift(self, params, axis, amount):
        shifted = np.array(params, dtype=float, copy=True)
        shifted[..., axis] += amount
        return shifted

    def jacobian(self, params):
        params = np.asarray(params, dtype=float)
        out = np.empty(params.shape[:-1] + (self.ambient_dim, self.n))
        for a in range(self.n):
            h = self.step[a]
            plus = self.position(self._shift(params, a, +h))
            minus = self.position(self._shift(params, a, -h))
            out[..., :, a] = (plus - minus) / (2.0 * h)
        return out

    def hessian(self, params):
        params = np.asarray(params, dtype=float)
        out = np.empty(params.shape[:-1] + (self.ambient_dim, self.n, self.n))
        base = self.position(params)
        for a in range(self.n):
            ha = self.step[a]
            out[..., :, a, a] = (
                self.position(self._shift(params, a, +ha))
                - 2.0 * base
                + self.position(self._shift(params, a, -ha))
            ) / ha**2
            for b in range(a + 1, self.n):
                hb = self.step[b]
                pp = self.position(self._shift(self._shift(params, a, +ha), b, +hb))
                pm = self.position(self._shift(self._shift(params, a, +ha), b, -hb))
                mp = self.position(self._shift(self._shift(params, a, -ha), b, +hb))
                mm = self.position(self._shift(self._shift(params, a, -ha), b, -hb))
                cross = (pp - pm - mp + mm) / (4.0 * ha * hb)
                out[..., :, a, b] = cross
                out[..., :, b, a] = cross
        return out


class _TableChart:
    """Chart tabulated on a tensor parameter grid (config-supplied positions).

    Positions are exact at the table nodes; derivatives use second-order
    grid stencils (one-sided at non-periodic edges).  Only table nodes are
    valid query parameters.
    """

    kind = "user_numeric"

    def __init__(self, axes_nodes, positions, periodic):
        self.axes_nodes = [np.asarray(a, dtype=float) for a in axes_nodes]
        self.n = len(self.axes_nodes)
        self.positions_table = np.asarray(positions, dtype=float)
        self.ambient_dim = self.positions_table.shape[-1]
        self.periodic = tuple(periodic)
        self.step = np.array([a[1] - a[0] for a in self.axes_nodes])
        self._jac_table = None
        self._hess_table = None

    def _locate(self, params):
        params = np.asarray(params, dtype=float)
        idx = []
        for a, nodes in enumerate(self.axes_nodes):
            h = self.step[a]
            j = np.rint((params[..., a] - nodes[0]) / h).astype(int)
            if self.periodic[a]:
                j = np.mod(j, nodes.size)
            off = params[..., a] - nodes[np.clip(j, 0, nodes.size - 1)]
            if np.any(j < 0) or np.any(j >= nodes.size) or np.any(np.abs(off) > 1e-9 * max(abs(h), 1.0)):
                raise OutOfChart("table charts can only be evaluated at table nodes")
            idx.append(j)
        return tuple(idx)

    def _tables(self):
        if self._jac_table is None:
            from .measure import grid_partials  # stencils shared with fields

            jac = np.stack(
                [
                    grid_partials(self.positions_table[..., i], self.step, self.periodic)
                    for i in range(self.ambient_dim)
                ],
                axis=-2,
            )  # (*dims, ambient, n)
            hess = np.stack(
                [
                    np.stack(
                        [
                            grid_partials(jac[..., i, a], self.step, self.periodic)
                            for a in range(self.n)
                        ],
                        axis=-2,
                    )
                    for i in range(self.ambient_dim)
                ],
                axis=-3,
            )  # (*dims, ambient, n, n)
            self._jac_table = jac
            self._hess_table = 0.5 * (hess + np.swapaxes(hess, -1, -2))
        return self._jac_table, self._hess_table

    def position(self, params):
        return self.positions_table[self._locate(params)]

    def jacobian(self, params):
        jac, _ = self._tables()
        return jac[self._locate(params)]

    def hessian(self, params):
        _, hess = self._tables()
        return hess[self._locate(params)]


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ManifoldModel:
    """An immersed submanifold ``Sigma^n subset R^(n+m)`` with one chart.

    Attributes
    ----------
    name : str
        Human-readable identifier, e.g. ``cylinder(k=1,n=2,r=1.414)``.
    n, m : int
        Intrinsic dimension and codimension.
    chart : object
        Evaluator with ``position/jacobian/hessian`` over parameter arrays.
    chart_kind : str
        ``analytic_builtin`` or ``user_numeric``.
    param_box : tuple of (lo, hi)
        Valid parameter ranges per axis (degenerate chart points such as
        sphere poles are excluded by a margin).
    periodic : tuple of bool
        Whether each parameter axis wraps around.
    shrinker : bool
        Whether the model satisfies ``H + x_nor/2 = 0`` identically.
    """

    name: str
    n: int
    m: int
    chart: object
    chart_kind: str
    param_box: tuple
    periodic: tuple
    shrinker: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def ambient_dim(self):
        return self.n + self.m

    def box_widths(self):
        return np.array([hi - lo for lo, hi in self.param_box])

    def contains(self, param):
        param = np.asarray(param, dtype=float)
        for a, (lo, hi) in enumerate(self.param_box):
            if self.periodic[a]:
                continue
            pad = 1e-12 * max(hi - lo, 1.0)
            if np.any(param[..., a] < lo - pad) or np.any(param[..., a] > hi + pad):
                return False
        return True

    def position(self, params):
        return self.chart.position(np.asarray(params, dtype=float))

    def jacobian(self, params):
        return self.chart.jacobian(np.asarray(params, dtype=float))

    def hessian(self, params):
        return self.chart.hessian(np.asarray(params, dtype=float))


def _sphere_coords(k, radius, axis_offset=0):
    """Monomials for the standard embedding of S^k(radius) in R^(k+1).

    Angles are ``axis_offset .. axis_offset+k-1``: k-1 colatitudes followed
    by one periodic longitude.
    """
    coords = []
    for i in range(k + 1):
        factors = []
        for a in range(min(i, k - 1)):
            factors.append((axis_offset + a, "sin"))
        if i < k:
            factors.append((axis_offset + i, "cos") if i < k - 1 else (axis_offset + k - 1, "cos"))
        else:
            factors.append((axis_offset + k - 1, "sin"))
        coords.append([(radius, tuple(factors))])
    return coords


def plane(n, m=1, half_width=40.0):
    """Flat ``R^n`` embedded in ``R^(n+m)`` as a coordinate plane.

    The plane is a self-shrinker (``H = 0`` and ``x_nor = 0``).
    """
    coords = [[(1.0, ((j, "id"),))] for j in range(n)]
    coords += [[] for _ in range(m)]
    chart = _TrigChart(n, coords)
    return ManifoldModel(
        name=f"plane(n={n},m={m})",
        n=n,
        m=m,
        chart=chart,
        chart_kind=chart.kind,
        param_box=tuple((-half_width, half_width) for _ in range(n)),
        periodic=tuple(False for _ in range(n)),
        shrinker=True,
        meta={"half_width": half_width},
    )


def sphere(n, radius=None, m=1, pole_margin=1e-3):
    """Round sphere ``S^n(radius)`` in ``R^(n+m)``.

    With the default ``radius = sqrt(2n)`` the sphere is a self-shrinker.
    For ``n >= 2`` the polar chart degenerates at the poles; the parameter
    box excludes a small colatitude margin there (the omitted caps carry
    ``O(margin^2)`` area).
    """
    if radius is None:
        radius = math.sqrt(2.0 * n)
    coords = _sphere_coords(n, radius)
    coords += [[] for _ in range(m - 1)]
    chart = _TrigChart(n, coords)
    box = [(pole_margin, math.pi - pole_margin) for _ in range(n - 1)]
    box.append((0.0, 2.0 * math.pi))
    periodic = tuple([False] * (n - 1) + [True])
    is_shrinker = abs(radius - math.sqrt(2.0 * n)) < 1e-12
    return ManifoldModel(
        name=f"sphere(n={n},r={radius:g},m={m})",
        n=n,
        m=m,
        chart=chart,
        chart_kind=chart.kind,
        param_box=tuple(box),
        periodic=periodic,
        shrinker=is_shrinker,
        meta={"radius": radius, "pole_margin": pole_margin},
    )


def cylinder(k, n, radius=None, m=1, half_width=40.0, pole_margin=1e-3):
    """Round cylinder ``S^k(radius) x R^(n-k)`` in ``R^(n+m)``.

    The default ``radius = sqrt(2k)`` makes it a self-shrinker.
    """
    if not 1 <= k <= n - 1:
        raise ValueError("cylinder needs 1 <= k <= n-1")
    if radius is None:
        radius = math.sqrt(2.0 * k)
    coords = _sphere_coords(k, radius)
    coords += [[(1.0, ((k + j, "id"),))] for j in range(n - k)]
    coords += [[] for _ in range(m - 1)]
    chart = _TrigChart(n, coords)
    box = [(pole_margin, math.pi - pole_margin) for _ in range(k - 1)]
    box.append((0.0, 2.0 * math.pi))
    box += [(-half_width, half_width) for _ in range(n - k)]
    periodic = tuple([False] * (k - 1) + [True] + [False] * (n - k))
    is_shrinker = abs(radius - math.sqrt(2.0 * k)) < 1e-12
    return ManifoldModel(
        name=f"cylinder(k={k},n={n},r={radius:g},m={m})",
        n=n,
        m=m,
        chart=chart,
        chart_kind=chart.kind,
        param_box=tuple(box),
        periodic=periodic,
        shrinker=is_shrinker,
        meta={"radius": radius, "k": k, "half_width": half_width},
    )


def from_callable(fn, n, ambient_dim, param_box, periodic=None, name="user",
                  step_scale=1e-4, shrinker=False):
    """Wrap a twice-differentiable position callable as a model.

    Chart derivatives use nested central differences with a per-axis step
    of ``step_scale`` times the parameter-box width.
    """
    if ambient_dim <= n:
        raise ValueError("ambient dimension must exceed intrinsic dimension")
    periodic = tuple(periodic) if periodic is not None else tuple(False for _ in range(n))
    widths = [hi - lo for lo, hi in param_box]
    step = [step_scale * w for w in widths]
    chart = _CallableChart(fn, n, ambient_dim, step)
    return ManifoldModel(
        name=name,
        n=n,
        m=ambient_dim - n,
        chart=chart,
        chart_kind=chart.kind,
        param_box=tuple(tuple(b) for b in param_box),
        periodic=periodic,
        shrinker=shrinker,
        meta={"step_scale": step_scale},
    )


def from_table(axes_nodes, positions, periodic=None, name="table"):
    """Model from a table of sampled chart positions on a tensor grid."""
    positions = np.asarray(positions, dtype=float)
    n = len(axes_nodes)
    periodic = tuple(periodic) if periodic is not None else tuple(False for _ in range(n))
    chart = _TableChart(axes_nodes, positions, periodic)
    # periodic axes omit the right endpoint; the box closes the period
    box = tuple(
        (float(a[0]), float(a[0] + len(a) * h) if per else float(a[-1]))
        for a, h, per in zip(chart.axes_nodes, chart.step, periodic)
    )
    return ManifoldModel(
        name=name,
        n=n,
        m=chart.ambient_dim - n,
        chart=chart,
        chart_kind=chart.kind,
        param_box=box,
        periodic=periodic,
        shrinker=False,
        meta={"table_shape": positions.shape},
    )


_BUILTIN_FACTORIES = {"plane": plane, "sphere": sphere, "cylinder": cylinder}


def builtin_model(name, **params):
    """Instantiate a named built-in model (``plane``, ``sphere``, ``cylinder``)."""
    try:
        factory = _BUILTIN_FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown builtin model {name!r}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometryFrame:
    """Pointwise first/second fundamental data at one chart parameter."""

    param: np.ndarray
    position: np.ndarray        # x in R^(n+m)
    tangent_basis: np.ndarray   # (n, n+m) rows span T_x Sigma
    metric: np.ndarray          # (n, n)
    metric_inverse: np.ndarray
    sqrt_det_g: float
    x_tan: np.ndarray
    x_nor: np.ndarray
    second_fundamental: np.ndarray  # (n, n, n+m) normal-valued
    mean_curvature: np.ndarray      # (n+m,) trace_g of II

    def invariant_residuals(self):
        """Max violation of the frame identities (split, orthogonality,
        normality of H, trace identity)."""
        split = np.max(np.abs(self.x_tan + self.x_nor - self.position))
        ortho = abs(float(self.x_tan @ self.x_nor))
        tangential_h = self.tangent_basis @ self.mean_curvature
        h_coeff = self.metric_inverse @ tangential_h
        h_tangential = float(np.linalg.norm(self.tangent_basis.T @ h_coeff))
        trace = np.einsum("ab,abi->i", self.metric_inverse, self.second_fundamental)
        trace_id = float(np.linalg.norm(trace - self.mean_curvature))
        return {
            "position_split": float(split),
            "tan_nor_orthogonality": ortho,
            "mean_curvature_normal": h_tangential,
            "trace_identity": trace_id,
        }


def frames_on_params(model, params):
    """Vectorized frame data over an array of parameters.

    Returns a dict of arrays broadcast over ``params.shape[:-1]``:
    position, jacobian, metric, metric_inv, sqrt_det_g, x_tan, x_nor,
    second_fundamental, mean_curvature, radius (ambient |x|).
    """
    params = np.asarray(params, dtype=float)
    jac = model.jacobian(params)                      # (..., i, a)
    g = np.einsum("...ia,...ib->...ab", jac, jac)
    det = np.linalg.det(g)
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise RankDeficientChart("chart differential drops rank on the sample")
    ginv = np.linalg.inv(g)
    x = model.position(params)
    coeff = np.einsum("...ab,...ib,...i->...a", ginv, jac, x)
    x_tan = np.einsum("...ia,...a->...i", jac, coeff)
    x_nor = x - x_tan
    hess = model.hessian(params)                      # (..., i, a, b)
    tang = np.einsum("...ia,...ab,...jb,...jcd->...icd", jac, ginv, jac, hess)
    second = hess - tang
    mean = np.einsum("...ab,...iab->...i", ginv, second)
    return {
        "params": params,
        "position": x,
        "jacobian": jac,
        "metric": g,
        "metric_inv": ginv,
        "sqrt_det_g": np.sqrt(det),
        "x_tan": x_tan,
        "x_nor": x_nor,
        "second_fundamental": np.moveaxis(second, -3, -1),  # (..., a, b, i)
        "mean_curvature": mean,
        "radius": np.linalg.norm(x, axis=-1),
    }


def frame_invariant_residuals(model, params):
    """Worst frame-identity violations over a parameter sample (vectorized).

    Returns max |x_tan + x_nor - x|, max |<x_tan, x_nor>|, max norm of the
    tangential part of H, max |trace_g II - H| and max |H + x_nor/2|.
    """
    data = frames_on_params(model, params)
    split = float(np.max(np.abs(data["x_tan"] + data["x_nor"] - data["position"])))
    ortho = float(np.max(np.abs(np.einsum("...i,...i->...", data["x_tan"], data["x_nor"]))))
    jac = data["jacobian"]
    coeff = np.einsum("...ab,...ib,...i->...a", data["metric_inv"], jac, data["mean_curvature"])
    h_tang = np.einsum("...ia,...a->...i", jac, coeff)
    h_normal = float(np.max(np.linalg.norm(h_tang, axis=-1)))
    trace = np.einsum("...ab,...abi->...i", data["metric_inv"], data["second_fundamental"])
    trace_id = float(np.max(np.linalg.norm(trace - data["mean_curvature"], axis=-1)))
    shrink = float(np.max(np.linalg.norm(
        data["mean_curvature"] + 0.5 * data["x_nor"], axis=-1)))
    return {
        "position_split": split,
        "tan_nor_orthogonality": ortho,
        "mean_curvature_normal": h_normal,
        "trace_identity": trace_id,
        "shrinker_residual": shrink,
    }


def sample_params(model, count, rng):
    """Uniform parameter sample over the chart box (table charts sample
    their own nodes, the only points they can evaluate)."""
    nodes = getattr(model.chart, "axes_nodes", None)
    if nodes is not None:
        idx = [rng.integers(0, len(a), size=count) for a in nodes]
        return np.stack([a[i] for a, i in zip(nodes, idx)], axis=-1)
    lo = np.array([b[0] for b in model.param_box])
    hi = np.array([b[1] for b in model.param_box])
    return lo + (hi - lo) * rng.random((count, model.n))


def frame_at(model, param):
    """Full geometric frame at a single parameter.

    Raises OutOfChart outside the parameter box and RankDeficientChart if
    the immersion degenerates (smallest singular value of the chart
    differential below ``1e-10`` of the largest).
    """
    param = np.asarray(param, dtype=float).reshape(-1)
    if param.size != model.n:
        raise OutOfChart(f"parameter has {param.size} components, chart expects {model.n}")
    if not model.contains(param):
        raise OutOfChart(f"parameter {param} outside chart box {model.param_box}")
    data = frames_on_params(model, param[None, :])
    jac = data["jacobian"][0]
    sv = np.linalg.svd(jac, compute_uv=False)
    if sv[-1] <= _RANK_TOL * sv[0]:
        raise RankDeficientChart(
            f"singular values {sv} indicate rank loss at {param}")
    return GeometryFrame(
        param=param,
        position=data["position"][0],
        tangent_basis=jac.T,
        metric=data["metric"][0],
        metric_inverse=data["metric_inv"][0],
        sqrt_det_g=float(data["sqrt_det_g"][0]),
        x_tan=data["x_tan"][0],
        x_nor=data["x_nor"][0],
        second_fundamental=data["second_fundamental"][0],
        mean_curvature=data["mean_curvature"][0],
    )


def shrinker_residual(model, param):
    """Pointwise defect ``H + x_nor/2`` of the self-shrinker equation."""
    frame = frame_at(model, param)
    return frame.mean_curvature + 0.5 * frame.x_nor


@dataclass(frozen=True)
class TangentialGradient:
    """Gradient of a sampled field at a grid node."""

    chart_components: np.ndarray  # (n,) = g^{ab} d_b f
    ambient: np.ndarray           # (n+m,) tangent representative
    one_sided: bool               # a boundary stencil was used


def tangential_gradient(model, fld, param):
    """Gradient of a DiscreteField at the grid node nearest ``param``.

    Chart partial derivatives use second-order central stencils (periodic
    wrap where the chart wraps); nodes on a non-periodic edge fall back to
    one-sided second-order stencils, flagged via ``one_sided``.
    """
    from .measure import grid_partials, node_index_for  # local to avoid cycle

    grid = fld.grid
    idx = node_index_for(grid, param)
    step = np.array([ax.spacing for ax in grid.axes])
    partials = grid_partials(fld.values, step, grid.periodic_flags)
    d = partials[(*idx, slice(None))]
    node_param = np.array([grid.axes[a].nodes()[idx[a]] for a in range(model.n)])
    frame = frame_at(model, node_param)
    chart_components = frame.metric_inverse @ d
    ambient = frame.tangent_basis.T @ chart_components
    one_sided = any(
        (not grid.periodic_flags[a]) and (idx[a] == 0 or idx[a] == grid.shape[a] - 1)
        for a in range(model.n)
    )
    return TangentialGradient(chart_components=chart_components,
                              ambient=ambient, one_sided=bool(one_sided))
