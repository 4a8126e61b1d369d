import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_bvp as scipy_bvp

from hjbsos.oracle import (
    Grid1D,
    OracleError,
    psi_boundary_from_cost,
    reference_pieces,
    richardson_change,
    solve_bvp,
    sup_norm_estimate,
)

from conftest import PSI_EDGE, scalar_problem


def laplace():
    return scalar_problem(drift="0", q="0")


def test_constant_boundary_gives_constant():
    g = solve_bvp(laplace(), (-1.0, 1.0), (1.0, 1.0), 101)
    assert np.allclose(g.values, 1.0, atol=1e-14)


def test_linear_harmonic_exact_at_nodes():
    g = solve_bvp(laplace(), (0.0, 1.0), (0.0, 1.0), 101)
    assert np.allclose(g.values, g.x, atol=1e-13)


def test_grid_refinement_converged(problem):
    assert richardson_change(problem, (0.0, 1.0), (1.0, PSI_EDGE), 2001) < 1e-5
    assert richardson_change(problem, (-1.0, 0.0), (PSI_EDGE, 1.0), 2001) < 1e-5


def test_second_order_convergence(problem):
    d1 = richardson_change(problem, (0.0, 1.0), (1.0, PSI_EDGE), 201)
    d2 = richardson_change(problem, (0.0, 1.0), (1.0, PSI_EDGE), 401)
    assert d1 / d2 == pytest.approx(4.0, rel=0.15)


def test_matches_collocation_solver(problem):
    """scipy's collocation BVP solver as an independent reference."""
    for (a, b), bc in (((0.0, 1.0), (1.0, PSI_EDGE)), ((-1.0, 0.0), (PSI_EDGE, 1.0))):
        def rhs(x, y):
            f = -x**3 + 5 * x**2 + 3 * x
            return np.vstack([y[1], 2.0 * (x**2 * y[0] - f * y[1])])

        def res(ya, yb):
            return np.array([ya[0] - bc[0], yb[0] - bc[1]])

        xs = np.linspace(a, b, 201)
        ref = scipy_bvp(rhs, res, xs, np.vstack([np.linspace(*bc, 201), np.zeros(201)]), tol=1e-10, max_nodes=100000)
        assert ref.success
        g = solve_bvp(problem, (a, b), bc, 2001)
        assert np.max(np.abs(ref.sol(g.x)[0] - g.values)) < 1e-6


def test_reference_pieces_split_at_origin(problem):
    left, right = reference_pieces(problem, 2001)
    assert (left.a, left.b, right.a, right.b) == (-1.0, 0.0, 0.0, 1.0)
    assert left.values[-1] == right.values[0] == 1.0
    assert left.values[0] == right.values[-1] == PSI_EDGE


@settings(max_examples=25, deadline=None)
@given(c1=st.floats(-3, 3), c2=st.floats(-3, 3), left=st.floats(0.01, 2.0), right=st.floats(0.01, 2.0))
def test_discrete_maximum_principle(c1, c2, left, right):
    p = scalar_problem(drift=f"{c1}*x + {c2}*x^2", q="0")
    g = solve_bvp(p, (-1.0, 1.0), (left, right), 201)
    lo, hi = min(left, right), max(left, right)
    assert np.all(g.values >= lo - 1e-12) and np.all(g.values <= hi + 1e-12)
    # with a positive cost the solution stays in [0, max boundary]
    g = solve_bvp(scalar_problem(drift=f"{c1}*x + {c2}*x^2"), (-1.0, 1.0), (left, right), 201)
    assert np.all(g.values >= 0) and np.all(g.values <= hi + 1e-12)


def test_upwinding_keeps_strong_drift_monotone():
    p = scalar_problem(drift="200*x", q="0")
    g = solve_bvp(p, (-1.0, 1.0), (0.0, 1.0), 41)
    assert np.all(np.diff(g.values) >= -1e-12)


def test_sup_norm_examples(problem, oracle_grids):
    assert sup_norm_estimate(Grid1D(0.0, 1.0, 3, np.ones(3)), 1.0) == 0.0
    g = Grid1D(0.0, 1.0, 3, np.array([1.0, math.exp(-2.0), 0.5]))
    assert sup_norm_estimate(g, 1.0) == pytest.approx(2.0, rel=1e-15)
    for grid in oracle_grids:
        est = sup_norm_estimate(grid, problem.lam)
        assert math.isfinite(est) and est >= 10 - math.log(20) - 1e-12


def test_sup_norm_rejects_nonpositive():
    with pytest.raises(OracleError):
        sup_norm_estimate(Grid1D(0.0, 1.0, 3, np.array([1.0, 0.0, 1.0])), 1.0)


def test_grid_validation():
    with pytest.raises(OracleError):
        Grid1D(0.0, 1.0, 2, np.ones(2))
    with pytest.raises(OracleError):
        solve_bvp(scalar_problem(), (0.0, 1.0), (1.0, 1.0), 2)


def test_csv_export(tmp_path, oracle_grids):
    path = tmp_path / "o.csv"
    oracle_grids[1].to_csv(path, 1.0)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,psi,value"
    x, psi, v = map(float, lines[-1].split(","))
    assert (x, psi) == (1.0, PSI_EDGE) and v == pytest.approx(10 - math.log(20))


def test_boundary_from_cost():
    assert psi_boundary_from_cost(10 - math.log(20), 1.0) == pytest.approx(PSI_EDGE, rel=1e-14)
