import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbsos.sdp import Residuals, SdpProblem, SdpSettings, SdpSolution, SdpStatus, residuals, solve

from oracles import dual_certificate_instance

E12 = np.array([[0.0, 0.5], [0.5, 0.0]])


def candidate(X, y, S, obj):
    return SdpSolution(X=X, y=np.asarray(y, dtype=float), w=np.zeros(0), S=S, status=SdpStatus.OPTIMAL,
                       primal_obj=obj, dual_obj=obj, residuals=Residuals(0.0, 0.0, 0.0), iterations=0)


def sym_x_problem():
    """minimize x s.t. [[x, 1], [1, x]] PSD, with x a free variable."""
    cons = [[np.diag([1.0, 0.0])], [np.diag([0.0, 1.0])], [E12]]
    F = np.array([[-1.0], [-1.0], [0.0]])
    return SdpProblem.from_dense([2], cons, [0.0, 0.0, 1.0], [np.zeros((2, 2))], F=F, c_free=[1.0])


def sym_x_problem_block_only():
    cons = [[E12], [np.diag([1.0, -1.0])]]
    return SdpProblem.from_dense([2], cons, [1.0, 0.0], [0.5 * np.eye(2)])


def test_minimize_x_with_2x2_lmi():
    sol = solve(sym_x_problem())
    assert sol.status == SdpStatus.OPTIMAL
    assert sol.primal_obj == pytest.approx(1.0, abs=1e-7)
    assert sol.w[0] == pytest.approx(1.0, abs=1e-7)
    sol = solve(sym_x_problem_block_only())
    assert sol.primal_obj == pytest.approx(1.0, abs=1e-7)


def test_trace_one_forces_unit_scalar():
    p = SdpProblem.from_dense([1], [[np.eye(1)]], [1.0], [np.zeros((1, 1))])
    sol = solve(p)
    assert sol.status == SdpStatus.OPTIMAL
    assert sol.X[0][0, 0] == pytest.approx(1.0, abs=1e-7)


def test_min_trace_with_fixed_corner():
    p = SdpProblem.from_dense([2], [[np.diag([1.0, 0.0])]], [2.0], [np.eye(2)])
    sol = solve(p)
    assert sol.status == SdpStatus.OPTIMAL
    assert sol.primal_obj == pytest.approx(2.0, abs=1e-7)
    X = sol.X[0]
    assert abs(X[1, 1]) <= 1e-6 and abs(X[0, 1]) <= 1e-6
    # grid search over the remaining entries agrees: trace = 2 + X22 >= 2
    best = min(2 + x22 for x22 in np.linspace(0, 1, 101) for x12 in np.linspace(-1, 1, 41)
               if 2 * x22 - x12**2 >= 0)
    assert best == pytest.approx(2.0)


def test_residuals_of_exact_solution():
    p = sym_x_problem_block_only()
    X = [np.array([[1.0, 1.0], [1.0, 1.0]])]
    y = np.array([1.0, 0.0])  # C - A^T y = [[.5,-.5],[-.5,.5]] PSD
    S = [0.5 * np.eye(2) - E12]
    r = residuals(p, candidate(X, y, S, 1.0))
    assert r.primal <= 1e-7 and r.dual <= 1e-7 and r.gap <= 1e-7


def test_residuals_zero_problem():
    p = SdpProblem.from_dense([2], [[np.zeros((2, 2))]], [0.0], [np.zeros((2, 2))])
    sol = candidate([np.zeros((2, 2))], np.zeros(1), [np.zeros((2, 2))], 0.0)
    r = residuals(p, sol)
    assert (r.primal, r.dual, r.gap) == (0.0, 0.0, 0.0)


def test_residuals_linear_response():
    p = SdpProblem.from_dense([2], [[np.diag([1.0, 0.0])]], [2.0], [np.eye(2)])
    X = [np.diag([2.0 + 1e-3, 0.0])]
    sol = candidate(X, [1.0], [np.diag([0.0, 1.0])], 2.0)
    assert residuals(p, sol).primal == pytest.approx(1e-3, rel=1e-9)


def test_infeasible_reports_certificate():
    # X11 = -1 with X PSD is impossible
    p = SdpProblem.from_dense([1], [[np.eye(1)]], [-1.0], [np.eye(1)])
    sol = solve(p)
    assert sol.status == SdpStatus.INFEASIBLE
    y = sol.certificate
    assert float(p.b @ y) == pytest.approx(1.0)
    # sum y_k A_k must be negative semidefinite
    assert max(np.linalg.eigvalsh(a)[-1] for a in p.apply_AT(y)) <= 1e-6


def test_unbounded_detected():
    # minimize -X11 subject only to X12 = 0
    p = SdpProblem.from_dense([2], [[E12]], [0.0], [np.diag([-1.0, 0.0])])
    assert solve(p).status == SdpStatus.UNBOUNDED


def test_max_iter_status():
    sol = solve(sym_x_problem(), SdpSettings(max_iter=2))
    assert sol.status == SdpStatus.MAX_ITER


def _check_optimal_invariants(sol):
    assert min(np.linalg.eigvalsh(x)[0] for x in sol.X) >= -1e-7
    assert sol.residuals.gap <= 1e-7 * (1 + abs(sol.primal_obj))
    assert sol.residuals.primal <= 1e-7
    assert sol.dual_obj <= sol.primal_obj + 1e-9 * (1 + abs(sol.primal_obj))


def test_random_dual_certificate_instances():
    rng = np.random.default_rng(20240601)
    for _ in range(50):
        dims = [int(d) for d in rng.integers(1, 7, size=rng.integers(1, 4))]
        m = int(rng.integers(1, sum(d * (d + 1) // 2 for d in dims) + 1))
        p, opt, dual_opt = dual_certificate_instance(rng, dims, m)
        assert opt == pytest.approx(dual_opt, abs=1e-9 * (1 + abs(opt)))
        sol = solve(p)
        assert sol.status == SdpStatus.OPTIMAL
        assert sol.primal_obj == pytest.approx(opt, abs=1e-6 * (1 + abs(opt)))
        _check_optimal_invariants(sol)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_weak_duality_and_invariants_on_optimal(seed):
    rng = np.random.default_rng(seed)
    dims = [int(d) for d in rng.integers(1, 5, size=2)]
    p, opt, _ = dual_certificate_instance(rng, dims, int(rng.integers(1, 5)))
    sol = solve(p)
    if sol.status == SdpStatus.OPTIMAL:
        _check_optimal_invariants(sol)


def test_gap_decreases_over_final_iterations():
    rng = np.random.default_rng(11)
    for _ in range(10):
        p, _, _ = dual_certificate_instance(rng, [4, 3], 6)
        sol = solve(p)
        gaps = [t["gap"] for t in sol.trace[-5:]]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(gaps, gaps[1:]))


def _parse_sdpa(text):
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith(('"', "*"))]
    m, nblocks = int(lines[0]), int(lines[1])
    dims = [int(t) for t in lines[2].split()]
    c = np.array([float(t) for t in lines[3].split()])
    mats = [[np.zeros((abs(d), abs(d))) for d in dims] for _ in range(m + 1)]
    for ln in lines[4:]:
        k, b, i, j, v = ln.split()
        k, b, i, j = int(k), int(b) - 1, int(i) - 1, int(j) - 1
        mats[k][b][i, j] = mats[k][b][j, i] = float(v)
    return m, nblocks, dims, c, mats


def test_sdpa_export_round_trips_coefficients():
    rng = np.random.default_rng(4)
    p, _, _ = dual_certificate_instance(rng, [3, 2], 4)
    m, nblocks, dims, c, mats = _parse_sdpa(p.to_sdpa())
    assert (m, nblocks, dims) == (4, 2, [3, 2])
    # exact: 17 significant digits reproduce every double
    assert np.array_equal(c, -p.b)
    for bi in range(2):
        assert np.array_equal(mats[0][bi], -p.C[bi])
        for k in range(m):
            assert np.array_equal(mats[k + 1][bi], -p.constraint_matrix(k)[bi])


def test_sdpa_export_free_variables_as_lp_block():
    m, nblocks, dims, c, mats = _parse_sdpa(sym_x_problem().to_sdpa())
    assert dims == [2, -2] and nblocks == 2
    assert np.array_equal(np.diag(mats[0][1]), [1.0, -1.0])


def test_well_formedness_checks():
    from hjbsos.sdp import SdpError

    with pytest.raises(SdpError):
        SdpProblem.from_dense([2], [[np.array([[0.0, 1.0], [0.0, 0.0]])]], [1.0], [np.eye(2)])
    with pytest.raises(SdpError):
        SdpProblem.from_dense([2], [[E12], [E12]], [1.0], [np.eye(2)])
