"""Property-based checks of the structural invariants on small grids."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import shrinklsi as S
from shrinklsi.abp import SourceTerm, build_operator
from shrinklsi.measure import grid_geometry

LINE = S.plane(1)
GRID = S.make_grid(LINE, [129], box=[(-8, 8)], truncation_radius=40.0)
GEO = grid_geometry(LINE, GRID)
RHO = S.canonical_density(LINE, GRID).field
OP = build_operator(LINE, GRID, RHO)

CIRCLE = S.sphere(1, radius=1.0)
CGRID = S.make_grid(CIRCLE, [64])
CGEO = grid_geometry(CIRCLE, CGRID)

coeffs = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3)


def smooth_positive_field(model, grid, geo, cs):
    theta = geo["params"][..., 0]
    logv = cs[0] * np.sin(theta) + cs[1] * np.cos(2 * theta) + cs[2] * 0.3
    return S.make_field(model, grid, np.exp(logv), log_values=logv)


@settings(max_examples=25, deadline=None)
@given(cs=coeffs)
def test_normalize_idempotent_property(cs):
    logv = cs[0] * np.sin(GEO["params"][..., 0]) - 0.25 * GEO["radius"] ** 2 \
        + cs[1] * np.cos(GEO["params"][..., 0]) + cs[2]
    fld = S.make_field(LINE, GRID, np.exp(logv), log_values=logv)
    once = S.normalize(LINE, fld)
    twice = S.normalize(LINE, once)
    assert S.integrate(LINE, once) == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(once.values - twice.values)) <= 1e-14 * np.max(once.values)


@settings(max_examples=20, deadline=None)
@given(cs=coeffs, delta=st.floats(0.05, 2.0))
def test_discounted_solve_monotone_in_source_property(cs, delta):
    base = np.sin(3.0 * GEO["params"][..., 0]) * cs[0] + cs[1]
    gap = 0.1 + abs(cs[2])
    ell1 = SourceTerm(field=S.make_field(LINE, GRID, base),
                      sup_norm=float(np.max(np.abs(base))), outside_value=0.0,
                      outside_constant_dev=0.0, tau=1.0)
    ell2 = SourceTerm(field=S.make_field(LINE, GRID, base + gap),
                      sup_norm=float(np.max(np.abs(base + gap))), outside_value=0.0,
                      outside_constant_dev=0.0, tau=1.0)
    w1 = S.discounted_solve(OP, ell1, delta)
    w2 = S.discounted_solve(OP, ell2, delta)
    assert np.all(w2.values >= w1.values - 1e-9)


@settings(max_examples=20, deadline=None)
@given(cs=coeffs, delta=st.floats(0.05, 2.0))
def test_discount_sup_bound_property(cs, delta):
    vals = cs[0] * np.sin(GEO["params"][..., 0]) + cs[1] * np.cos(
        2.0 * GEO["params"][..., 0]) + cs[2]
    sup = float(np.max(np.abs(vals)))
    if sup == 0.0:
        return
    ell = SourceTerm(field=S.make_field(LINE, GRID, vals), sup_norm=sup,
                     outside_value=0.0, outside_constant_dev=0.0, tau=1.0)
    w = S.discounted_solve(OP, ell, delta)  # raises on a bound violation
    assert np.max(np.abs(w.values)) <= sup / delta + 1e-8


@settings(max_examples=25, deadline=None)
@given(cs=coeffs)
def test_jensen_correction_nonpositive_property(cs):
    fld = S.normalize(CIRCLE, smooth_positive_field(CIRCLE, CGRID, CGEO, cs))
    rep = S.deficit(CIRCLE, fld)
    assert rep.jensen_correction <= 1e-12
    assert rep.deficit_general >= rep.deficit_sharp - 1e-12


@settings(max_examples=25, deadline=None)
@given(cs=coeffs)
def test_gaussian_form_nonnegative_on_circle_shrinker_property(cs):
    circle = S.sphere(1)
    grid = S.make_grid(circle, [64])
    geo = grid_geometry(circle, grid)
    fld = S.normalize(circle, smooth_positive_field(circle, grid, geo, cs),
                      weight="dgamma")
    assert S.gaussian_form_deficit(circle, fld) >= -1e-10


@settings(max_examples=10, deadline=None)
@given(shift=st.floats(-0.45, 0.45), scale=st.floats(0.8, 1.25))
def test_alpha_floor_property_over_bump_shapes(shift, scale):
    # the sharp-constant lower bound holds across bump placements and widths
    grid = S.make_grid(LINE, [1601], truncation_radius=40.0)
    bump = S.bump_density(LINE, grid, center=[shift, 0.0],
                          halfwidth=3.0 * scale, power=4)
    pert, op, ell = S.assemble(LINE, bump, epsilon=0.25)
    sol = S.vanishing_discount(op, ell, pert)
    assert sol.alpha >= 1.0 + 0.5 * math.log(4.0 * math.pi) - 1e-3
