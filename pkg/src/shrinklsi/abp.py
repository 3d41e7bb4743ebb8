"""Ergodic drift-diffusion solves behind the sharp log-Sobolev constant.

Pipeline: perturb a compactly supported density ``f`` with the canonical
Gaussian ``f_tau`` so the weight has full support, assemble the drift
operator ``L w = Lap_Sigma w + grad log(f_eps) . grad w`` and the bounded
source ``l``, solve the discounted problems ``delta w - (L w + l) = 0``
down a geometric schedule, and extract the ergodic pair ``(w, c)`` as the
vanishing-discount limit.  Then ``u = u0 + w`` with ``u0 = |x|^2/2`` and
``alpha = alpha_tau + c`` solves the sharp-constant equation; three
structural checks (sup bound per discount step, quadratic-growth
sandwich, vanishing boundary flux) certify the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    GrowthViolation,
    LinearSolveFailure,
    MaximumPrincipleViolation,
    NoConvergence,
    PecletViolation,
    SupportTooLarge,
)
from .measure import (
    DiscreteField,
    canonical_density,
    grid_geometry,
    grid_partials,
    integrate,
    make_field,
)

__all__ = [
    "PerturbedDensity",
    "DriftOperator",
    "SourceTerm",
    "ErgodicSolution",
    "assemble",
    "canonical_pair_residual",
    "conservative_divergence",
    "discounted_solve",
    "vanishing_discount",
    "divergence_residual",
    "dirichlet_energy",
]

DEFAULT_DISCOUNTS = tuple(2.0 ** (-k) for k in range(31))
SUP_BOUND_SLACK = 1e-8
SOLVE_RTOL = 1e-10


# ---------------------------------------------------------------------------
# perturbed density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbedDensity:
    """Mixture ``(f + eps f_tau) / Z`` with ``Z`` the quadrature mass.

    On flat space ``Z = 1 + eps`` up to quadrature roundoff; on a curved
    model the Gaussian carries mass ``lambda(Sigma) != 1`` and the division
    by the measured mass keeps the mixture an exact unit-mass density,
    which every downstream identity assumes.
    """

    epsilon: float
    tau: float
    base: DiscreteField
    field: DiscreteField
    mass_scale: float

    @property
    def fingerprint(self):
        return self.field.fingerprint()


def _base_logs(fld):
    if fld.log_values is not None:
        return fld.log_values
    with np.errstate(divide="ignore"):
        return np.log(fld.values)


def _check_support(model, fld):
    """The base density must die off before the truncated region ends.

    Chart-box ends that stay far inside the truncation radius (sphere pole
    margins, say) are seams of a compact surface, not truncation
    boundaries, and carry no decay requirement.
    """
    geo = grid_geometry(model, fld.grid)
    peak = float(np.max(fld.values))
    if peak <= 0.0:
        raise SupportTooLarge("base density is identically zero")
    r_trunc = fld.grid.truncation_radius
    shell = geo["radius"] >= 0.98 * r_trunc
    for a, per in enumerate(fld.grid.periodic_flags):
        if per:
            continue
        edge = np.zeros(fld.grid.shape, dtype=bool)
        sl = [slice(None)] * fld.grid.ndim
        sl[a] = 0
        edge[tuple(sl)] = True
        sl[a] = -1
        edge[tuple(sl)] = True
        shell = shell | (edge & (geo["radius"] >= 0.9 * r_trunc))
    if shell.any() and float(np.max(fld.values[shell])) > 1e-12 * peak:
        raise SupportTooLarge(
            "density does not decay below 1e-12 of its peak at the truncation boundary")


def perturbed_density(model, fld, epsilon, tau=1.0):
    """Full-support unit-mass mixture of ``f`` with the canonical density."""
    if not epsilon > 0.0:
        raise PecletViolation("epsilon must be positive")  # pragma: no cover - arg guard
    _check_support(model, fld)
    ft = canonical_density(model, fld.grid, tau)
    log_mix = np.logaddexp(_base_logs(fld), math.log(epsilon) + ft.field.log_values)
    raw = make_field(model, fld.grid, np.exp(log_mix), log_values=log_mix)
    mass = integrate(model, raw)
    log_fe = log_mix - math.log(mass)
    fe = make_field(model, fld.grid, np.exp(log_fe), log_values=log_fe,
                    name=f"perturbed(eps={epsilon:g},tau={tau:g})")
    return PerturbedDensity(epsilon=float(epsilon), tau=float(tau), base=fld,
                            field=fe, mass_scale=mass)


# ---------------------------------------------------------------------------
# drift operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DriftOperator:
    """Sparse stencil form of ``Lap_Sigma + grad log(rho) . grad`` on a grid.

    Second derivatives (and the metric's first-order terms) use central
    stencils; the combined first-order coefficient is switched to
    first-order upwinding at nodes violating the mesh-Peclet bound so the
    rows stay an M-matrix and the discrete maximum principle holds.
    Non-periodic boundaries reflect (no-flux) unless ``bc='dirichlet'``.
    """

    model: object
    grid: object
    rho: DiscreteField
    matrix: sp.csr_matrix
    bc: str
    dirichlet_mask: np.ndarray
    upwind_fraction: float
    peclet_violations: int
    max_spacing: float

    def apply(self, values):
        flat = np.asarray(values, dtype=float).reshape(-1)
        return (self.matrix @ flat).reshape(self.grid.shape)


def _neighbor_index(flat_index, axis, offset, shape, periodic):
    """Flat indices of the +-offset neighbor with wrap or node reflection."""
    idx = np.unravel_index(flat_index, shape)
    j = idx[axis] + offset
    count = shape[axis]
    if periodic:
        j = np.mod(j, count)
    else:
        j = np.where(j < 0, -j, j)
        j = np.where(j >= count, 2 * (count - 1) - j, j)
    coords = list(idx)
    coords[axis] = j
    return np.ravel_multi_index(coords, shape)


def build_operator(model, grid, rho, bc="neumann", strict_peclet=False):
    """Assemble the drift operator with weight density ``rho``."""
    if bc not in ("neumann", "dirichlet"):
        raise PecletViolation(f"unknown boundary condition {bc!r}")  # arg guard
    geo = grid_geometry(model, grid)
    shape = grid.shape
    ndim = grid.ndim
    spacings = grid.spacings
    periodic = grid.periodic_flags
    n_nodes = int(np.prod(shape))
    flat = np.arange(n_nodes)

    ginv = geo["metric_inv"]
    sqrtg = geo["sqrt_det_g"]

    # metric first-order terms: (1/sqrt g) d_a (sqrt g g^{al})
    b_metric = np.zeros(shape + (ndim,))
    for l in range(ndim):
        acc = np.zeros(shape)
        for a in range(ndim):
            t = sqrtg * ginv[..., a, l]
            acc += grid_partials(t, spacings, periodic)[..., a]
        b_metric[..., l] = acc / sqrtg

    dlog = grid_partials(_base_logs(rho), spacings, periodic)
    b_drift = np.einsum("...la,...a->...l", ginv, dlog)
    b = (b_metric + b_drift).reshape(-1, ndim)
    diag_coeff = np.stack([ginv[..., l, l] for l in range(ndim)], axis=-1).reshape(-1, ndim)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    upwind_nodes = np.zeros(n_nodes, dtype=bool)
    for l in range(ndim):
        h = spacings[l]
        ip = _neighbor_index(flat, l, +1, shape, periodic[l])
        im = _neighbor_index(flat, l, -1, shape, periodic[l])
        a_ll = diag_coeff[:, l]
        add(flat, ip, a_ll / h**2)
        add(flat, im, a_ll / h**2)
        add(flat, flat, -2.0 * a_ll / h**2)
        bl = b[:, l]
        violated = np.abs(bl) * h / 2.0 > a_ll
        upwind_nodes |= violated
        central = ~violated
        add(flat[central], ip[central], bl[central] / (2.0 * h))
        add(flat[central], im[central], -bl[central] / (2.0 * h))
        up_pos = violated & (bl > 0)
        add(flat[up_pos], ip[up_pos], bl[up_pos] / h)
        add(flat[up_pos], flat[up_pos], -bl[up_pos] / h)
        up_neg = violated & (bl <= 0)
        add(flat[up_neg], flat[up_neg], bl[up_neg] / h)
        add(flat[up_neg], im[up_neg], -bl[up_neg] / h)
        # metric cross terms (vanish for every orthogonal built-in chart)
        for k in range(l + 1, ndim):
            a_lk = ginv[..., l, k].reshape(-1)
            if float(np.max(np.abs(a_lk))) < 1e-14:
                continue
            hk = spacings[k]
            pp = _neighbor_index(ip, k, +1, shape, periodic[k])
            pm = _neighbor_index(ip, k, -1, shape, periodic[k])
            mp = _neighbor_index(im, k, +1, shape, periodic[k])
            mm = _neighbor_index(im, k, -1, shape, periodic[k])
            c4 = 2.0 * a_lk / (4.0 * h * hk)
            add(flat, pp, c4)
            add(flat, mm, c4)
            add(flat, pm, -c4)
            add(flat, mp, -c4)

    violations = int(np.sum(upwind_nodes))
    if strict_peclet and violations:
        raise PecletViolation(
            f"mesh-Peclet condition violated at {violations} nodes; refine the grid")

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes, n_nodes),
    ).tocsr()

    dirichlet_mask = np.zeros(n_nodes, dtype=bool)
    if bc == "dirichlet":
        mask = np.zeros(shape, dtype=bool)
        for a, per in enumerate(periodic):
            if per:
                continue
            sl = [slice(None)] * ndim
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = -1
            mask[tuple(sl)] = True
        dirichlet_mask = mask.reshape(-1)
        keep = sp.diags((~dirichlet_mask).astype(float))
        matrix = (keep @ matrix).tocsr()

    return DriftOperator(
        model=model,
        grid=grid,
        rho=rho,
        matrix=matrix,
        bc=bc,
        dirichlet_mask=dirichlet_mask,
        upwind_fraction=violations / n_nodes,
        peclet_violations=violations,
        max_spacing=float(max(spacings)),
    )


# ---------------------------------------------------------------------------
# source term
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceTerm:
    """Bounded source of the ergodic problem.

    ``l = tau(|grad log f_eps|^2 - |grad log f_tau|^2)
    + grad log(f_eps/f_tau) . x_tan + log(f_tau/f_eps)``; the curvature
    terms of the canonical identity and of the solved equation are equal
    and drop from the difference, so only density terms remain.  Outside
    the support of the base density the mixture is proportional to the
    canonical density and ``l`` is the constant ``log(Z/eps)``.
    """

    field: DiscreteField
    sup_norm: float
    outside_value: float
    outside_constant_dev: float
    tau: float


def source_term(model, pert, tau=None):
    tau = pert.tau if tau is None else tau
    grid = pert.field.grid
    geo = grid_geometry(model, grid)
    spacings, periodic = grid.spacings, grid.periodic_flags
    ft = canonical_density(model, grid, tau)
    log_fe = pert.field.log_values
    log_ft = ft.field.log_values
    dlog_e = grid_partials(log_fe, spacings, periodic)
    dlog_t = grid_partials(log_ft, spacings, periodic)
    ginv = geo["metric_inv"]
    gradsq_e = np.einsum("...ab,...a,...b->...", ginv, dlog_e, dlog_e)
    gradsq_t = np.einsum("...ab,...a,...b->...", ginv, dlog_t, dlog_t)
    diff = dlog_e - dlog_t
    jtx = np.einsum("...ia,...i->...a", geo["jacobian"], geo["position"])
    dot = np.einsum("...ab,...a,...b->...", ginv, diff, jtx)
    values = tau * (gradsq_e - gradsq_t) + dot + (log_ft - log_fe)
    fld = make_field(model, grid, values, name="source")
    outside_value = math.log(pert.mass_scale / pert.epsilon)
    far = geo["radius"] > pert.base.support_radius + 2.0 * max(spacings)
    dev = float(np.max(np.abs(values[far] - outside_value))) if far.any() else 0.0
    return SourceTerm(
        field=fld,
        sup_norm=float(np.max(np.abs(values))),
        outside_value=outside_value,
        outside_constant_dev=dev,
        tau=tau,
    )


def assemble(model, fld, epsilon, tau=1.0, bc="neumann", strict_peclet=False):
    """Perturbed density, drift operator and source, ready for solves."""
    pert = perturbed_density(model, fld, epsilon, tau)
    op = build_operator(model, fld.grid, pert.field, bc=bc, strict_peclet=strict_peclet)
    ell = source_term(model, pert)
    return pert, op, ell


# ---------------------------------------------------------------------------
# discounted solves and the vanishing-discount limit
# ---------------------------------------------------------------------------

def _raw_solve(op, rhs, delta, rtol=SOLVE_RTOL):
    """Solve ``(delta I - L) z = rhs`` to a small backward error."""
    if not delta > 0.0:
        raise LinearSolveFailure("discount must be positive")
    n_nodes = op.matrix.shape[0]
    m = (sp.identity(n_nodes, format="csr") * delta - op.matrix).tocsr()
    m_norm = float(np.max(np.abs(m).sum(axis=1)))

    def backward_error(z):
        # residual relative to the problem scale ||M|| ||z|| + ||rhs||
        scale = m_norm * float(np.max(np.abs(z))) + float(np.max(np.abs(rhs)))
        return float(np.max(np.abs(m @ z - rhs))) / max(scale, 1e-300)

    z = spla.spsolve(m, rhs)
    if not np.all(np.isfinite(z)) or backward_error(z) > rtol:
        z, info = spla.lgmres(m, rhs, rtol=1e-13, atol=0.0, maxiter=2000)
        if info != 0 or backward_error(z) > rtol:
            raise LinearSolveFailure(
                f"sparse solve stalled at backward error {backward_error(z):.3e}")
    return z


def discounted_solve(op, ell, delta, rtol=SOLVE_RTOL, shift=0.0):
    """Solve ``delta w - (L w + l) = 0`` and enforce the discount sup bound.

    ``shift`` subtracts a constant ``s`` from the source and adds
    ``s/delta`` back to the solution.  The operator kills constants, so
    this is exact algebra; with ``s`` near the ergodic constant it keeps
    the solved variable O(1) instead of O(s/delta), which preserves full
    precision in ``delta * w(anchor)`` down to the smallest discounts.
    """
    rhs = np.asarray(ell.field.values, dtype=float).reshape(-1) - shift
    if op.dirichlet_mask.any():
        rhs[op.dirichlet_mask] = -shift
    z = _raw_solve(op, rhs, delta, rtol=rtol)
    w = z + shift / delta
    sup_w = float(np.max(np.abs(w)))
    bound = ell.sup_norm / delta
    if sup_w > bound + SUP_BOUND_SLACK:
        raise MaximumPrincipleViolation(
            f"sup|w_delta| = {sup_w:.6e} exceeds sup|l|/delta = {bound:.6e}")
    return make_field(op.model, op.grid, w.reshape(op.grid.shape), name=f"w(delta={delta:g})")


def _anchor_index(op, anchor=None):
    geo = grid_geometry(op.model, op.grid)
    if anchor is None:
        return int(np.argmin(geo["radius"].reshape(-1)))
    from .measure import node_index_for

    return int(np.ravel_multi_index(node_index_for(op.grid, anchor), op.grid.shape))


def growth_certificate(op, w_field, heights=(1.0, 0.5, 0.1), inner_fraction=None):
    """Smallest sandwich radii: outside ``R_h`` the recentered limit stays
    between its ball extrema widened by ``h |x|^2 / 2``."""
    geo = grid_geometry(op.model, op.grid)
    if inner_fraction is None:
        inner_fraction = 1.0 if op.bc == "neumann" else 0.9
    radius = geo["radius"].reshape(-1)
    w = w_field.values.reshape(-1)
    keep = radius <= inner_fraction * float(np.max(radius))
    radius, w = radius[keep], w[keep]
    order = np.argsort(radius)
    radius, w = radius[order], w[order]
    out = []
    r_max = float(radius[-1])
    candidates = np.unique(np.quantile(radius, np.linspace(0.02, 0.98, 97)))
    slack = 1e-12 * (1.0 + float(np.max(np.abs(w))))
    for h in heights:
        upper_env = w - 0.5 * h * radius**2
        lower_env = w + 0.5 * h * radius**2
        found = None
        for r_h in candidates:
            inside = radius <= r_h
            if not inside.any():
                continue
            m_hi = float(np.max(w[inside]))
            m_lo = float(np.min(w[inside]))
            hi_margin = m_hi - float(np.max(upper_env))
            lo_margin = float(np.min(lower_env)) - m_lo
            if hi_margin >= -slack and lo_margin >= -slack:
                found = (float(r_h), float(min(hi_margin, lo_margin)))
                break
        if found is None:
            raise GrowthViolation(
                f"no sandwich radius for h={h} inside the truncated grid (max r {r_max:g})")
        out.append((float(h), found[0], found[1]))
    return tuple(out)


@dataclass(frozen=True)
class ErgodicSolution:
    """Vanishing-discount limit with its certificates and diagnostics."""

    model_name: str
    tau: float
    epsilon: float
    bc: str
    anchor_flat_index: int
    c: float
    alpha_base: float
    alpha: float
    w: DiscreteField
    u: DiscreteField
    discount_trace: tuple   # (delta, delta*w_delta(anchor), sup|w_delta|, sup|l|/delta)
    growth: tuple           # (h, R_h, margin)
    divergence_radii: tuple
    divergence_residuals: tuple
    dirichlet_energies: tuple
    sup_ell: float
    upwind_fraction: float
    converged_at: float
    perturbed_fingerprint: str
    base_fingerprint: str

    def discount_bound_violations(self, slack=SUP_BOUND_SLACK):
        return sum(1 for _, _, sup_w, bound in self.discount_trace if sup_w > bound + slack)


def vanishing_discount(op, ell, pert, deltas=None, tol_c=1e-8, tol_w=1e-6,
                       anchor=None, divergence_radii=None):
    """Drive the discount to zero and extract the ergodic pair ``(w, c)``.

    ``c`` is the limit of ``delta * w_delta(anchor)`` and ``w`` the limit of
    the recentered iterates; convergence is declared when successive ``c``
    estimates differ by less than ``tol_c`` and successive recentered
    iterates differ by less than ``tol_w`` (sup norm over the inner half of
    the grid).
    """
    deltas = DEFAULT_DISCOUNTS if deltas is None else tuple(deltas)
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise NoConvergence("discount schedule must decrease")
    geo = grid_geometry(op.model, op.grid)
    anchor_idx = _anchor_index(op, anchor)
    radius_flat = geo["radius"].reshape(-1)
    # inner half of the grid; on compact models with constant |x| the
    # midpoint keeps every node in play
    r_lo, r_hi = float(np.min(radius_flat)), float(np.max(radius_flat))
    inner = radius_flat <= 0.5 * (r_lo + r_hi)
    ell_flat = np.asarray(ell.field.values, dtype=float).reshape(-1)
    trace = []
    prev_v = None
    prev_c = None
    shift = 0.0
    converged = None
    for delta in deltas:
        # solve for z = w_delta - shift/delta (the operator kills constants,
        # so this is the same discounted problem without the huge constant
        # component; c and the recentered iterate come out at full precision)
        rhs = ell_flat - shift
        if op.dirichlet_mask.any():
            rhs = rhs.copy()
            rhs[op.dirichlet_mask] = -shift
        z = _raw_solve(op, rhs, delta)
        c_est = shift + delta * float(z[anchor_idx])
        v = z - z[anchor_idx]
        sup_w = float(np.max(np.abs(z + shift / delta)))
        bound = ell.sup_norm / delta
        if sup_w > bound + SUP_BOUND_SLACK:
            raise MaximumPrincipleViolation(
                f"sup|w_delta| = {sup_w:.6e} exceeds sup|l|/delta = {bound:.6e}"
                f" at delta = {delta:g}")
        trace.append((float(delta), c_est, sup_w, bound))
        if prev_v is not None:
            dc = abs(c_est - prev_c)
            dv = float(np.max(np.abs(v[inner] - prev_v[inner])))
            if dc < tol_c and dv < tol_w:
                converged = delta
                prev_v, prev_c = v, c_est
                break
        prev_v, prev_c = v, c_est
        shift = c_est
    if converged is None:
        raise NoConvergence(
            f"discount schedule exhausted after {len(trace)} steps; "
            f"last c increment {abs(trace[-1][1] - trace[-2][1]):.3e}")

    w_field = make_field(op.model, op.grid, prev_v.reshape(op.grid.shape), name="w")
    u_vals = 0.5 * geo["radius"] ** 2 + w_field.values
    u_field = make_field(op.model, op.grid, u_vals, name="u")
    growth = growth_certificate(op, w_field)
    c = prev_c
    alpha_base = op.model.n + 0.5 * op.model.n * math.log(4.0 * math.pi * pert.tau)
    if divergence_radii is None:
        top = 0.75 * op.grid.truncation_radius
        divergence_radii = tuple(
            r for r in (2.0, 3.0, 5.0, 8.0, 10.0, 12.0, 15.0, 20.0, 30.0)
            if r <= top) or (top,)
    div = divergence_residual(op.model, pert.field, u_field, divergence_radii)
    energies = dirichlet_energy(op.model, pert.field, u_field, divergence_radii)
    return ErgodicSolution(
        model_name=op.model.name,
        tau=pert.tau,
        epsilon=pert.epsilon,
        bc=op.bc,
        anchor_flat_index=anchor_idx,
        c=c,
        alpha_base=alpha_base,
        alpha=alpha_base + c,
        w=w_field,
        u=u_field,
        discount_trace=tuple(trace),
        growth=growth,
        divergence_radii=tuple(float(r) for r in divergence_radii),
        divergence_residuals=div,
        dirichlet_energies=energies,
        sup_ell=ell.sup_norm,
        upwind_fraction=op.upwind_fraction,
        converged_at=float(converged),
        perturbed_fingerprint=pert.fingerprint,
        base_fingerprint=pert.base.fingerprint(),
    )


# ---------------------------------------------------------------------------
# conservative divergence, canonical residual, flux checks
# ---------------------------------------------------------------------------

def _shift_arr(arr, axis, offset, periodic):
    """Neighbor values with wrap or node reflection at the ends."""
    out = np.roll(arr, -offset, axis=axis)
    if periodic:
        return out
    sl_out = [slice(None)] * arr.ndim
    sl_src = [slice(None)] * arr.ndim
    if offset > 0:
        sl_out[axis] = -1
        sl_src[axis] = -2
    else:
        sl_out[axis] = 0
        sl_src[axis] = 1
    out[tuple(sl_out)] = arr[tuple(sl_src)]
    return out


def conservative_divergence(model, grid, rho_values, u_values):
    """Flux-form discretization of ``div(rho grad u)`` on the grid.

    Diagonal-metric fluxes live at half nodes with arithmetically averaged
    coefficients ``rho sqrt(g) g^{ll}``; metric cross terms (absent on the
    built-in charts) are added with central stencils.  At non-periodic
    edges the flux derivative switches to a second-order one-sided stencil.
    """
    geo = grid_geometry(model, grid)
    spacings, periodic = grid.spacings, grid.periodic_flags
    rho = np.asarray(rho_values, dtype=float)
    u = np.asarray(u_values, dtype=float)
    sqrtg = geo["sqrt_det_g"]
    ginv = geo["metric_inv"]
    acc = np.zeros(grid.shape)
    for l in range(grid.ndim):
        h = spacings[l]
        a = rho * sqrtg * ginv[..., l, l]
        a_p = 0.5 * (a + _shift_arr(a, l, +1, periodic[l]))
        a_m = 0.5 * (a + _shift_arr(a, l, -1, periodic[l]))
        du_p = _shift_arr(u, l, +1, periodic[l]) - u
        du_m = u - _shift_arr(u, l, -1, periodic[l])
        contrib = (a_p * du_p - a_m * du_m) / h**2
        if not periodic[l]:
            # one-sided flux derivative at the two edge slices
            g_half = np.moveaxis(a_p * du_p / h, l, 0)   # flux at i + 1/2
            c = np.moveaxis(contrib, l, 0)
            c[0] = (-2.0 * g_half[0] + 3.0 * g_half[1] - g_half[2]) / h
            c[-1] = (2.0 * g_half[-2] - 3.0 * g_half[-3] + g_half[-4]) / h
        acc += contrib
        for k in range(grid.ndim):
            if k == l:
                continue
            a_lk = rho * sqrtg * ginv[..., l, k]
            if float(np.max(np.abs(a_lk))) < 1e-14:
                continue
            du_k = grid_partials(u, spacings, periodic)[..., k]
            acc += grid_partials(a_lk * du_k, spacings, periodic)[..., l]
    return acc / sqrtg


def canonical_pair_residual(model, grid, tau=1.0):
    """Pointwise residual of the canonical-pair identity under the discrete
    operators: ``div(f_tau grad u0)`` minus its closed-form right side.

    The returned field is ``O(h^2)``; it vanishes identically in the
    continuum on every submanifold.
    """
    geo = grid_geometry(model, grid)
    ft = canonical_density(model, grid, tau)
    u0 = 0.5 * geo["radius"] ** 2
    lhs = conservative_divergence(model, grid, ft.field.values, u0)
    x_tan_sq = np.sum(geo["x_tan"] ** 2, axis=-1)
    defect_vec = geo["x_nor"] / (2.0 * tau) + geo["mean_curvature"]
    defect_sq = np.sum(defect_vec**2, axis=-1)
    h_sq = np.sum(geo["mean_curvature"] ** 2, axis=-1)
    rhs_over_f = (ft.field.log_values - x_tan_sq / (4.0 * tau)
                  + tau * defect_sq - tau * h_sq + ft.alpha)
    residual = lhs - ft.field.values * rhs_over_f
    return make_field(model, grid, residual, name=f"canonical_residual(tau={tau:g})")


def divergence_residual(model, rho_field, u_field, radii):
    """Total divergence over growing ambient balls; tends to zero with radius.

    On one-dimensional charts the boundary flux ``rho sqrt(g) g^{11} u'`` is
    interpolated at the two crossing points; otherwise the masked quadrature
    of the conservative divergence (its exact discrete equivalent) is used.
    """
    grid = rho_field.grid
    geo = grid_geometry(model, grid)
    radii = [float(r) for r in radii]
    nodes = grid.axes[0].nodes() if model.n == 1 else None
    flat_line = (
        model.n == 1
        and not grid.periodic_flags[0]
        and np.allclose(geo["radius"], np.abs(nodes))
    )
    if flat_line:
        du = grid_partials(u_field.values, grid.spacings, grid.periodic_flags)[..., 0]
        flux = rho_field.values * geo["sqrt_det_g"] * geo["metric_inv"][..., 0, 0] * du
        return tuple(
            float(np.interp(r, nodes, flux) - np.interp(-r, nodes, flux))
            for r in radii
        )
    div = conservative_divergence(model, grid, rho_field.values, u_field.values)
    w = geo["quad_weights"]
    return tuple(float(np.sum(w * div * (geo["radius"] <= r))) for r in radii)


def dirichlet_energy(model, rho_field, u_field, radii):
    """Weighted energies ``int_{B_r} rho |grad u|^2 dvol`` (bounded in r)."""
    grid = rho_field.grid
    geo = grid_geometry(model, grid)
    du = grid_partials(u_field.values, grid.spacings, grid.periodic_flags)
    gradsq = np.einsum("...ab,...a,...b->...", geo["metric_inv"], du, du)
    w = geo["quad_weights"] * rho_field.values * gradsq
    return tuple(float(np.sum(w * (geo["radius"] <= r))) for r in radii)
