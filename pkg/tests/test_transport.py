import math

import numpy as np
import pytest

import shrinklsi as S
from shrinklsi.errors import MinimizerOnBoundary
from shrinklsi.measure import grid_geometry, make_field
from shrinklsi.transport import (
    canonical_equality_witness,
    certify,
    covariant_hessian,
    jacobian_check,
    normal_frame,
    sample_offsets,
)


def u0_field(model, grid):
    geo = grid_geometry(model, grid)
    return make_field(model, grid, 0.5 * geo["radius"] ** 2, name="u0")


@pytest.mark.parametrize(
    "factory,counts,box",
    [
        (lambda: S.cylinder(1, 2), [64, 201], [(0, 2 * math.pi), (-8, 8)]),
        (lambda: S.sphere(2), [101, 96], None),
        (lambda: S.sphere(1, radius=1.0), [128], None),
    ],
    ids=["cylinder", "sphere2", "unit-circle"],
)
def test_covariant_hessian_identity(factory, counts, box):
    # Hess(|x|^2/2) - <II, x_nor> equals the metric: pins the Hessian
    # convention (chart second derivatives minus Christoffel contraction)
    model = factory()
    grid = S.make_grid(model, counts, box=box, truncation_radius=40.0)
    geo = grid_geometry(model, grid)
    hess = covariant_hessian(model, u0_field(model, grid))
    m = hess - np.einsum("...abi,...i->...ab", geo["second_fundamental"], geo["x_nor"])
    assert np.max(np.abs(m - geo["metric"])) < 1e-6


def test_normal_frame_orthonormal_and_normal(cylinder_model):
    grid = S.make_grid(cylinder_model, [64, 201], box=[(0, 2 * math.pi), (-8, 8)],
                       truncation_radius=40.0)
    geo = grid_geometry(cylinder_model, grid)
    idx = (5, 100)
    basis = normal_frame(cylinder_model, geo, idx)
    assert basis.shape == (3, 1)
    assert np.allclose(basis.T @ basis, np.eye(1), atol=1e-12)
    assert np.allclose(geo["jacobian"][idx].T @ basis, 0.0, atol=1e-12)


def test_surjectivity_canonical_pair_recovers_targets(line, line_grid):
    # grad(|x|^2/2) = x, so the minimizer of u0 - <x, xi> is xi itself
    u0 = u0_field(line, line_grid)
    h = line_grid.axes[0].spacing
    for xi in ([1.0, 0.0], [-2.3, 0.4], [0.7, -1.1]):
        rec = S.surjectivity_probe(line, u0, xi)
        assert rec.recovery_error <= h
        assert rec.hessian_psd
        assert rec.interior


def test_surjectivity_on_cylinder_axial_target(cylinder_model):
    grid = S.make_grid(cylinder_model, [64, 401], box=[(0, 2 * math.pi), (-8, 8)],
                       truncation_radius=40.0)
    u0 = u0_field(cylinder_model, grid)
    xi = np.array([0.0, 0.0, 2.0])  # axial: tangential part recovered exactly
    rec = S.surjectivity_probe(cylinder_model, u0, xi)
    assert rec.recovery_error <= 2 * grid.axes[1].spacing
    assert abs(rec.position[2] - 2.0) <= grid.axes[1].spacing


def test_surjectivity_minimizer_on_boundary_raises(line):
    grid = S.make_grid(line, [201], box=[(-2, 2)], truncation_radius=40.0)
    u0 = u0_field(line, grid)
    with pytest.raises(MinimizerOnBoundary):
        S.surjectivity_probe(line, u0, [3.0, 0.0])


def test_surjectivity_sweep_records_boundary_hits(line):
    grid = S.make_grid(line, [201], box=[(-2, 2)], truncation_radius=40.0)
    u0 = u0_field(line, grid)
    recs = S.surjectivity_sweep(line, u0, [[0.5, 0.0], [3.0, 0.0]])
    assert recs[0].interior and not recs[1].interior


def test_surjectivity_bump_case(line, solved_cases, rng):
    pert, _, _, sol = solved_cases[(1.0, 0.5)]
    h = sol.u.grid.axes[0].spacing
    targets = rng.uniform(-3.0, 3.0, size=(100, 2))
    recs = S.surjectivity_sweep(line, sol.u, targets)
    assert all(r.interior for r in recs)
    assert max(r.recovery_error for r in recs) <= 2.0 * h


def test_jacobian_equality_witness_canonical(line, line_grid):
    det, bound = canonical_equality_witness(line, line_grid)
    assert det == pytest.approx(1.0, abs=1e-10)
    assert abs(det - bound) < 1e-10


def test_jacobian_canonical_bound_tight_everywhere_flat(line, line_grid):
    # on flat space the canonical pair saturates the bound at every x
    f0 = S.canonical_density(line, line_grid)
    u0 = u0_field(line, line_grid)
    samples = [((i,), np.zeros(2)) for i in range(100, 6301, 250)]
    check = jacobian_check(line, u0, samples, f0.alpha, f0.field,
                           rel_slack=1e-6, h2_coeff=0.0)
    assert check.violations == 0
    assert check.in_u_count == len(samples)
    # roundoff in the second difference of x^2/2 grows like |x|^2 eps / h^2
    assert check.worst_ratio == pytest.approx(1.0, abs=1e-8)


def test_jacobian_indefinite_offsets_classified_out(cylinder_model):
    # large normal offsets make M = Hess u0 - <II, y> indefinite: not in U
    grid = S.make_grid(cylinder_model, [64, 201], box=[(0, 2 * math.pi), (-8, 8)],
                       truncation_radius=40.0)
    geo = grid_geometry(cylinder_model, grid)
    u0 = u0_field(cylinder_model, grid)
    ft = S.canonical_density(cylinder_model, grid)
    idx = (7, 100)
    nu = normal_frame(cylinder_model, geo, idx)[:, 0]
    # II points opposite x_nor on the circle factor; a big offset along
    # -x_nor flips the sign of the angular eigenvalue
    y_bad = -8.0 * geo["x_nor"][idx] / np.linalg.norm(geo["x_nor"][idx])
    check = jacobian_check(cylinder_model, u0, [(idx, y_bad)], ft.alpha, ft.field)
    assert check.in_u_count == 0
    assert check.violations == 0
    assert not check.samples[0].in_u
    # the witness offset y = x_nor gives M = g: inside U with det 1
    check2 = jacobian_check(cylinder_model, u0, [(idx, geo["x_nor"][idx])],
                            ft.alpha, ft.field)
    assert check2.in_u_count == 1
    assert check2.samples[0].det == pytest.approx(1.0, abs=1e-6)


def test_jacobian_bump_case_no_violations(line, solved_cases, rng):
    pert, _, _, sol = solved_cases[(1.0, 0.5)]
    samples = sample_offsets(line, sol.u.grid, 500, rng, y_bound=2.0)
    check = jacobian_check(line, sol.u, samples, sol.alpha, pert.field)
    assert check.violations == 0
    assert check.in_u_count >= 400


def test_jacobian_bound_scales_exponentially_in_alpha(line, solved_cases, rng):
    pert, _, _, sol = solved_cases[(1.0, 0.5)]
    samples = sample_offsets(line, sol.u.grid, 50, rng, y_bound=1.0)
    a = jacobian_check(line, sol.u, samples, sol.alpha, pert.field)
    b = jacobian_check(line, sol.u, samples, sol.alpha + 0.1, pert.field)
    for sa, sb in zip(a.samples, b.samples):
        if sa.in_u and math.isfinite(sa.bound):
            assert sb.bound == pytest.approx(sa.bound * math.exp(0.1), rel=1e-12)


def test_jacobian_codimension_two_fibers(rng):
    # line in R^3: two normal directions; on flat space the canonical bound
    # is y-independent (the |y|^2/4 terms cancel) and stays an equality
    model = S.plane(1, m=2)
    grid = S.make_grid(model, [801], box=[(-10, 10)], truncation_radius=40.0)
    geo = grid_geometry(model, grid)
    u0 = u0_field(model, grid)
    f0 = S.canonical_density(model, grid)
    samples = sample_offsets(model, grid, 60, rng, y_bound=2.0)
    assert all(len(y) == 3 and abs(y[0]) < 1e-12 for _, y in samples)
    check = jacobian_check(model, u0, samples, f0.alpha, f0.field,
                           rel_slack=1e-6, h2_coeff=0.0)
    assert check.violations == 0
    assert check.in_u_count == len(samples) - check.skipped
    assert check.worst_ratio == pytest.approx(1.0, abs=1e-8)


def test_mass_ratio_canonical_exact(line, line_grid):
    f0 = S.canonical_density(line, line_grid)
    assert S.mass_inequality(line, f0.field, f0.alpha) == pytest.approx(1.0, abs=1e-10)


def test_mass_ratio_solved_cases(line, solved_cases):
    for (tau, eps), (pert, _, _, sol) in solved_cases.items():
        if tau != 1.0:
            continue
        ratio = S.mass_inequality(line, pert.field, sol.alpha)
        assert ratio >= 1.0 - 1e-3, (tau, eps)
        # on flat space the ratio reduces to exp(alpha - alpha0)
        assert ratio == pytest.approx(math.exp(sol.c), rel=1e-9)


def test_mass_ratio_shrinker_reduces_to_exponential(circle_shrinker):
    # zero shrinker defect: ratio = e^(alpha - alpha0) * lambda-normalized mass
    grid = S.make_grid(circle_shrinker, [256])
    f = S.normalize(circle_shrinker, S.canonical_density(circle_shrinker, grid).field)
    alpha0 = 1.0 + 0.5 * math.log(4.0 * math.pi)
    assert S.mass_inequality(circle_shrinker, f, alpha0) == pytest.approx(1.0, abs=1e-12)
    assert S.mass_inequality(circle_shrinker, f, alpha0 + 0.3) == pytest.approx(
        math.exp(0.3), rel=1e-12)


def test_certify_full_run(line, solved_cases):
    pert, _, _, sol = solved_cases[(1.0, 0.1)]
    rng = np.random.default_rng(5)
    cert = certify(line, sol, pert, rng, jacobian_samples=500, probe_targets=100)
    assert cert.jacobian.violations == 0
    assert cert.jacobian.in_u_count >= 500
    assert cert.all_minimizers_interior
    assert cert.max_recovery_error <= 2.0 * max(sol.u.grid.spacings)
    assert cert.mass_ratio >= 1.0 - 1e-3
