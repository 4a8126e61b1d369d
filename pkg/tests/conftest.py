import math
from pathlib import Path

import numpy as np
import pytest

from hjbsos.config import load_config
from hjbsos.hjb import BoundaryComponent, HjbProblem, solve_hierarchy
from hjbsos.oracle import reference_pieces
from hjbsos.poly import PolyMatrix, Polynomial
from hjbsos.sos import SemialgebraicDomain

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "unstable_scalar.json"
PSI_EDGE = 20 * math.exp(-10)


def P(text, names=("x",)):
    return Polynomial.parse(text, list(names))


def scalar_problem(drift="-x^3+5*x^2+3*x", lam=1.0, q="x^2", box=(-1.0, 1.0), psi=PSI_EDGE):
    lo, hi = box
    lo_f, hi_f = P(f"x + {-lo}"), P(f"x - {hi}")
    return HjbProblem(
        f=PolyMatrix.column([P(drift)]), G=PolyMatrix.from_array([[1.0]], 1), B=PolyMatrix.from_array([[1.0]], 1),
        q=P(q), R=np.eye(1), sigma_eps=np.eye(1), lam=lam,
        domain=SemialgebraicDomain((P(f"({-lo} + x)*({hi} - x)"),), (lo_f, hi_f), ((lo, hi),)),
        boundary=(BoundaryComponent(lo_f, Polynomial.constant(psi, 1), "lo"),
                  BoundaryComponent(hi_f, Polynomial.constant(psi, 1), "hi")),
    )


@pytest.fixture(scope="session")
def config():
    return load_config(CONFIG)


@pytest.fixture(scope="session")
def problem(config):
    return config.problem


@pytest.fixture(scope="session")
def hierarchy(config):
    """Degrees 8..20 of the unstable scalar example, solved once per session."""
    return solve_hierarchy(config.problem, 8, 20, config.solver, config.partition_axes)


@pytest.fixture(scope="session")
def feasible(hierarchy):
    return [r for r in hierarchy if r.feasible]


@pytest.fixture(scope="session")
def by_degree(hierarchy):
    return {r.degree: r for r in hierarchy}


@pytest.fixture(scope="session")
def oracle_grids(problem):
    return reference_pieces(problem, 2001)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
