import math
from dataclasses import replace

import numpy as np
import pytest

from scipy.integrate import quad

from hjbsos.control import Controller, ValueFunction, value_at
from hjbsos.hjb import solve_degree
from hjbsos.poly import PolyMatrix, Polynomial
from hjbsos.sim import ExitReason, SimConfig, monte_carlo, simulate, step, terminal_cost

from conftest import PSI_EDGE, P, scalar_problem


@pytest.fixture(scope="module")
def ctrl(by_degree, problem):
    return {d: Controller(ValueFunction.from_solution(by_degree[d]), problem) for d in (12, 16, 18)}


def zero_controller(p):
    return Controller(ValueFunction.from_polynomial(Polynomial.constant(1.0, p.nvars), p.lam), p)


# step ------------------------------------------------------------------------------------


def test_step_frozen_dynamics():
    zero = PolyMatrix.from_array([[0.0]], 1)
    p = replace(scalar_problem(), f=PolyMatrix.column([P("0")]), G=zero, B=zero)
    assert step([0.3], [5.0], p, 0.01, [2.0])[0] == 0.3


def test_step_explicit_euler():
    p = scalar_problem(drift="-x")
    assert step([1.0], [0.0], p, 0.01, [0.0])[0] == pytest.approx(0.99, abs=1e-15)


def test_step_increment_variance():
    p = scalar_problem(drift="0")
    dt = 0.01
    z = np.random.default_rng(0).standard_normal(100_000)
    inc = np.array([step([0.0], [0.0], p, dt, [zi])[0] for zi in z])
    assert np.var(inc) == pytest.approx(dt, rel=0.05)


# config -----------------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(origin_ball=-1.0), dict(num_runs=0), dict(max_time=0.0)])
def test_sim_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_max_steps():
    assert SimConfig(dt=0.005, max_time=50.0).max_steps == 10_000


# simulate ----------------------------------------------------------------------------------


def test_start_at_origin(ctrl, problem):
    t = simulate(problem, ctrl[16], [0.0], SimConfig())
    assert t.exit_reason is ExitReason.ORIGIN
    assert t.total_cost == 0.0 and len(t.times) == 1


def _exit_probability(drift, x0, a, b):
    """P(hit b before a) for dx = f dt + dW from the scale function s' = exp(-2 int f)."""
    F = lambda x: quad(drift, 0.0, x)[0]  # noqa: E731
    ds = lambda x: math.exp(-2.0 * F(x))  # noqa: E731
    return quad(ds, a, x0)[0] / quad(ds, a, b)[0]


def test_zero_control_exits_boundary(problem):
    t = simulate(problem, zero_controller(problem), [0.5], SimConfig(rng_seed=3))
    assert t.exit_reason is ExitReason.BOUNDARY
    assert t.terminal_cost == pytest.approx(10 - math.log(20))
    assert problem.domain.contains(t.states)[-1]
    # the origin ball is reached first with the complementary probability
    p_exit = _exit_probability(lambda x: -x**3 + 5 * x**2 + 3 * x, 0.5, 0.0, 1.0)
    assert p_exit > 0.8
    runs = 400
    exits = sum(simulate(problem, zero_controller(problem), [0.5], SimConfig(), seed=s).exit_reason
                is ExitReason.BOUNDARY for s in range(runs))
    assert abs(exits / runs - p_exit) <= 4 * math.sqrt(p_exit * (1 - p_exit) / runs) + 0.02


def test_controlled_run_reaches_origin(ctrl, problem):
    reached = 0
    for s in range(10):
        t = simulate(problem, ctrl[16], [-0.5], SimConfig(), seed=s)
        assert np.all(problem.domain.contains(t.states, tol=1e-12))
        assert np.all(np.diff(t.cumulative_cost) >= 0) and t.running_cost >= 0
        reached += t.exit_reason is ExitReason.ORIGIN
    assert reached >= 8


def test_trajectory_is_reproducible(ctrl, problem):
    a = simulate(problem, ctrl[16], [-0.5], SimConfig(rng_seed=11))
    b = simulate(problem, ctrl[16], [-0.5], SimConfig(rng_seed=11))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.controls, b.controls)
    assert a.total_cost == b.total_cost


def test_initial_state_outside_domain(ctrl, problem):
    with pytest.raises(ValueError):
        simulate(problem, ctrl[16], [1.5], SimConfig())


def test_cost_matches_manual_accumulation(ctrl, problem):
    t = simulate(problem, ctrl[16], [-0.5], SimConfig(rng_seed=4))
    q = problem.q.evaluate(t.states[:-1])
    u = t.controls[:-1, 0]
    manual = float(np.sum((q + 0.5 * u * u) * 0.005))
    assert t.running_cost == pytest.approx(manual, rel=1e-12)


def test_terminal_cost_nearest_component(problem):
    assert terminal_cost(problem, [-0.999]) == pytest.approx(-math.log(PSI_EDGE))


def test_csv_header(ctrl, problem, tmp_path):
    t = simulate(problem, ctrl[16], [-0.5], SimConfig(rng_seed=1))
    path = tmp_path / "run.csv"
    t.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,u1,running_cost"
    assert len(lines) == len(t.times) + 1


# Monte Carlo -----------------------------------------------------------------------------------


def test_monte_carlo_needs_two_runs(ctrl, problem):
    with pytest.raises(ValueError):
        monte_carlo(problem, ctrl[16], [-0.5], SimConfig(num_runs=1))


def test_monte_carlo_seed_derivation(ctrl, problem):
    cfg = SimConfig(rng_seed=100, num_runs=3)
    mc = monte_carlo(problem, ctrl[16], [-0.5], cfg)
    for i, cost in enumerate(mc.costs):
        assert cost == simulate(problem, ctrl[16], [-0.5], cfg, seed=100 + i).total_cost
    assert monte_carlo(problem, ctrl[16], [-0.5], cfg, workers=3).costs == mc.costs


def test_zero_noise_runs_identical(by_degree, problem):
    quiet = replace(problem, sigma_eps=np.zeros((1, 1)))
    c = Controller(ValueFunction.from_solution(by_degree[16]), quiet)
    mc = monte_carlo(quiet, c, [-0.5], SimConfig(num_runs=5))
    assert len(set(mc.costs)) == 1 and mc.std_err <= 1e-15


def test_cost_bound_at_degree_16(ctrl, problem, by_degree):
    mc = monte_carlo(problem, ctrl[16], [-0.5], SimConfig(num_runs=20))
    v = value_at(ValueFunction.from_solution(by_degree[16]), [-0.5])
    assert mc.timed_out == 0
    assert mc.mean_cost <= v + 2 * mc.std_err


def test_std_err_scaling():
    # se^2 ~ 1/N: averaged over repeated experiments, doubling N halves it.
    # A stable problem keeps the costs bounded so the averages settle.
    p = scalar_problem(drift="-x", box=(-1.0, 1.0), psi=math.exp(-1.0))
    c = Controller(ValueFunction.from_solution(solve_degree(p, 8, partition_axes=(0,))), p)
    small, large = [], []
    for k in range(20):
        small.append(monte_carlo(p, c, [0.5], SimConfig(rng_seed=10_000 * k, num_runs=20)).std_err ** 2)
        large.append(monte_carlo(p, c, [0.5], SimConfig(rng_seed=10_000 * k + 5_000, num_runs=40)).std_err ** 2)
    assert np.mean(small) / np.mean(large) == pytest.approx(2.0, rel=0.3)


def test_higher_degree_converges_earlier(ctrl, problem):
    times = {}
    for d in (12, 18):
        times[d] = [simulate(problem, ctrl[d], [-0.5], SimConfig(), seed=s).exit_time for s in range(50)]
    assert np.median(times[18]) <= np.median(times[12])
