import math

import numpy as np
import pytest

import shrinklsi as S
from shrinklsi.errors import MismatchedInputs, NegativeValues, NotNormalized
from shrinklsi.measure import grid_geometry


def closed_form_gaussian_deficit(n, sigma2):
    """Independent oracle: Fisher / entropy integrals of a variance-sigma2
    Gaussian on flat R^n are classical closed forms."""
    return (n / sigma2 + 0.5 * n * math.log(2.0 * math.pi * sigma2) + 0.5 * n
            - n - 0.5 * n * math.log(4.0 * math.pi))


@pytest.mark.parametrize("sigma2", [0.5, 1.0, 2.0, 4.0])
def test_gaussian_deficit_matches_closed_form(line, line_grid, sigma2):
    fld = S.normalize(line, S.gaussian_density(line, line_grid, sigma2))
    rep = S.deficit(line, fld)
    assert rep.deficit_sharp == pytest.approx(
        closed_form_gaussian_deficit(1, sigma2), abs=1e-10)
    assert rep.curvature == 0.0
    assert rep.shrinker_defect == 0.0


def test_gaussian_deficit_zero_at_variance_two(line, line_grid):
    fld = S.normalize(line, S.gaussian_density(line, line_grid, 2.0))
    rep = S.deficit(line, fld)
    assert abs(rep.deficit_sharp) < 1e-12


def test_gaussian_example_numbers(line, line_grid):
    # variance 1: left side 2.4189, deficit 0.1534 against constant 2.2655
    fld = S.normalize(line, S.gaussian_density(line, line_grid, 1.0))
    rep = S.deficit(line, fld)
    lhs = rep.dirichlet - rep.entropy + rep.curvature
    assert lhs == pytest.approx(1.5 + 0.5 * math.log(2.0 * math.pi), abs=1e-10)
    assert rep.constant == pytest.approx(1.0 + 0.5 * math.log(4.0 * math.pi))
    assert rep.deficit_sharp == pytest.approx(0.5 - 0.5 * math.log(2.0), abs=1e-10)


def test_deficit_requires_normalization(line, line_grid):
    fld = S.gaussian_density(line, line_grid, 1.0)
    doubled = fld.with_values(2.0 * fld.values, log_values=fld.log_values + math.log(2.0))
    with pytest.raises(NotNormalized):
        S.deficit(line, doubled)


def test_deficit_rejects_negative_values(line, line_grid):
    geo = grid_geometry(line, line_grid)
    vals = np.where(np.abs(geo["radius"]) < 1, -1.0, 1.0)
    with pytest.raises(NegativeValues):
        S.deficit(line, S.make_field(line, line_grid, vals))


def test_tau_one_is_the_same_code_path(line, line_grid, std_bump):
    a = S.deficit(line, std_bump)
    b = S.deficit(line, std_bump, tau=1.0)
    assert a.deficit_sharp == b.deficit_sharp  # bitwise
    assert a.deficit_general == b.deficit_general


def test_jensen_correction_nonpositive_on_non_shrinker(unit_circle):
    # on the unit circle the defect is the constant 1/4, so the correction
    # vanishes; it must never exceed zero
    grid = S.make_grid(unit_circle, [128])
    geo = grid_geometry(unit_circle, grid)
    for a in (0.0, 0.4, -0.7):
        logv = a * np.sin(geo["params"][..., 0])
        fld = S.normalize(unit_circle, S.make_field(
            unit_circle, grid, np.exp(logv), log_values=logv))
        rep = S.deficit(unit_circle, fld)
        assert rep.jensen_correction <= 1e-12
        assert rep.shrinker_defect == pytest.approx(0.25, abs=1e-12)
        assert rep.deficit_general >= rep.deficit_sharp - 1e-12


def test_jensen_correction_strictly_negative_for_varying_defect():
    def wavy(p):
        t = p[..., 0]
        return np.stack([t, 0.8 * np.sin(t)], axis=-1)

    model = S.from_callable(wavy, 1, 2, [(-6, 6)], name="wavy")
    grid = S.make_grid(model, [301], truncation_radius=40.0)
    fld = S.bump_density(model, grid, center=[0.0, 0.0], halfwidth=3.0)
    rep = S.deficit(model, fld)
    assert rep.jensen_correction < -1e-6
    assert rep.deficit_general > rep.deficit_sharp


def test_deficit_general_nonnegative_on_shrinkers(line, line_grid, std_bump):
    rep = S.deficit(line, std_bump)
    assert rep.deficit_sharp >= -1e-6
    assert rep.deficit_general >= -1e-6
    assert abs(rep.deficit_general - rep.deficit_sharp) <= 1e-12


def test_gaussian_form_flat_member_zero(line, line_grid):
    one = S.make_field(line, line_grid, np.ones(line_grid.shape),
                       log_values=np.zeros(line_grid.shape))
    assert abs(S.gaussian_form_deficit(line, one)) < 1e-10


def test_gaussian_form_constant_on_circle_closed_form(circle_shrinker):
    # unnormalized correction: deficit of phi = 1 equals lambda log lambda
    grid = S.make_grid(circle_shrinker, [256])
    one = S.make_field(circle_shrinker, grid, np.ones(grid.shape),
                       log_values=np.zeros(grid.shape))
    lam = math.sqrt(2.0 * math.pi / math.e)
    assert S.gaussian_form_deficit(circle_shrinker, one) == pytest.approx(
        lam * math.log(lam), abs=1e-10)


def test_gaussian_form_fourier_family_nonnegative(circle_shrinker):
    grid = S.make_grid(circle_shrinker, [256])
    geo = grid_geometry(circle_shrinker, grid)
    for a in (0.3, -0.5, 0.9):
        logv = np.log1p(a * 0.9 * np.sin(geo["params"][..., 0]))
        phi = S.make_field(circle_shrinker, grid, np.exp(logv), log_values=logv)
        phi = S.normalize(circle_shrinker, phi, weight="dgamma")
        assert S.gaussian_form_deficit(circle_shrinker, phi) >= -1e-10


def test_gaussian_form_sine_perturbation_normalized(circle_shrinker):
    # phi proportional to 1 + 0.3 sin(theta), unit Gaussian-weighted mass
    grid = S.make_grid(circle_shrinker, [256])
    geo = grid_geometry(circle_shrinker, grid)
    vals = 1.0 + 0.3 * np.sin(geo["params"][..., 0])
    phi = S.normalize(circle_shrinker,
                      S.make_field(circle_shrinker, grid, vals), weight="dgamma")
    d = S.gaussian_form_deficit(circle_shrinker, phi)
    assert d >= -1e-10
    assert d > 1e-3  # genuinely away from the flat equality case


def test_substitution_identity_on_cylinder(cylinder_model):
    # the Gaussian-weighted deficit of phi equals the sharp deficit of
    # f = phi * gamma on a shrinker, to quadrature tolerance
    grid = S.make_grid(cylinder_model, [64, 401], box=[(0, 2 * math.pi), (-20, 20)],
                       truncation_radius=40.0)
    geo = grid_geometry(cylinder_model, grid)
    logphi = 0.3 * np.sin(geo["params"][..., 0]) - 0.1 * geo["position"][..., 2] ** 2
    phi = S.make_field(cylinder_model, grid, np.exp(logphi), log_values=logphi)
    mass = S.integrate(cylinder_model, phi, weight="dgamma")
    phi = phi.with_values(phi.values / mass, log_values=phi.log_values - math.log(mass))
    gf = S.gaussian_form_deficit(cylinder_model, phi)
    logf = phi.log_values + geo["gamma_log"]
    f = S.make_field(cylinder_model, grid, np.exp(logf), log_values=logf)
    rep = S.deficit(cylinder_model, f)
    assert gf == pytest.approx(rep.deficit_sharp, abs=1e-10)


def test_consistency_check_degenerate_case(line, line_grid, degenerate_case):
    pert, op, ell, sol = degenerate_case[1.0]
    rep = S.deficit(line, pert.field)
    assert S.consistency_check(rep, sol) < 1e-10


def test_consistency_check_bump_cases(line, solved_cases):
    for (tau, eps), (pert, op, ell, sol) in solved_cases.items():
        rep = S.deficit(line, pert.field, tau=tau)
        assert S.consistency_check(rep, sol) < 1e-3, (tau, eps)


def test_consistency_check_cylinder_density(cylinder_model):
    # full 2D solve on a curved shrinker; theta resolution drives the error
    grid = S.make_grid(cylinder_model, [128, 501], box=[(0, 2 * math.pi), (-20, 20)],
                       truncation_radius=40.0)
    bump = S.bump_density(cylinder_model, grid, center=[math.sqrt(2), 0.0, 0.0],
                          halfwidth=3.0, power=4)
    pert, op, ell = S.assemble(cylinder_model, bump, epsilon=0.5)
    sol = S.vanishing_discount(op, ell, pert)
    rep = S.deficit(cylinder_model, pert.field)
    assert S.consistency_check(rep, sol) < 1e-3
    # alpha dominates the flat-space floor on this shrinker as well
    assert sol.alpha >= 2.0 + math.log(4.0 * math.pi) - 1e-3
    assert S.mass_inequality(cylinder_model, pert.field, sol.alpha) >= 1.0 - 1e-3


def test_consistency_check_rejects_mismatched_inputs(line, solved_cases, std_bump):
    _, _, _, sol = solved_cases[(1.0, 0.5)]
    rep = S.deficit(line, std_bump)  # base density, not the perturbed one
    with pytest.raises(MismatchedInputs):
        S.consistency_check(rep, sol)
