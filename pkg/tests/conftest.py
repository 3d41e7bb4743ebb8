import numpy as np
import pytest

import shrinklsi as S

SOLVE_NODES = 6401
TRUNCATION = 40.0
BUMP = {"center": [0.5, 0.0], "halfwidth": 3.0, "power": 4}


@pytest.fixture(scope="session")
def line():
    return S.plane(1)


@pytest.fixture(scope="session")
def line_grid(line):
    return S.make_grid(line, [SOLVE_NODES], truncation_radius=TRUNCATION)


@pytest.fixture(scope="session")
def std_bump(line, line_grid):
    return S.bump_density(line, line_grid, **BUMP)


@pytest.fixture(scope="session")
def solved_cases(line, line_grid, std_bump):
    """Vanishing-discount solves shared across test modules, keyed (tau, eps)."""
    out = {}
    for tau in (1.0, 2.0):
        for eps in (0.5, 0.1, 0.01):
            pert, op, ell = S.assemble(line, std_bump, epsilon=eps, tau=tau)
            sol = S.vanishing_discount(op, ell, pert)
            out[(tau, eps)] = (pert, op, ell, sol)
    return out


@pytest.fixture(scope="session")
def degenerate_case(line, line_grid):
    """Pipeline run with the canonical density itself as input."""
    out = {}
    for tau in (1.0, 2.0):
        f = S.canonical_density(line, line_grid, tau).field
        pert, op, ell = S.assemble(line, f, epsilon=0.5, tau=tau)
        sol = S.vanishing_discount(op, ell, pert)
        out[tau] = (pert, op, ell, sol)
    return out


@pytest.fixture(scope="session")
def cylinder_model():
    return S.cylinder(1, 2)


@pytest.fixture(scope="session")
def sphere2():
    return S.sphere(2)


@pytest.fixture(scope="session")
def circle_shrinker():
    return S.sphere(1)


@pytest.fixture(scope="session")
def unit_circle():
    return S.sphere(1, radius=1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
