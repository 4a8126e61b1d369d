"""Finite-difference reference solutions for one-dimensional problems.

The desirability equation on an interval,

    (Sigma / 2) Psi'' + f Psi' - (q / lambda) Psi = 0,  Psi(a), Psi(b) given,

is discretised on a uniform grid and solved as a tridiagonal system.  The
result serves as an independent check of the SOS bounds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .hjb import HjbProblem, validate_compatibility


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        if self.n < 3:
            raise OracleError("a grid needs at least 3 nodes")
        if not self.b > self.a:
            raise OracleError("interval must have b > a")
        if len(self.values) != self.n:
            raise OracleError("one value per node is required")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n)

    def value_function(self, lam: float) -> np.ndarray:
        if np.any(self.values <= 0):
            raise OracleError("nonpositive desirability on the grid")
        return -lam * np.log(self.values)

    def to_csv(self, path, lam: float) -> None:
        """Columns x, psi, value (value = -lambda log psi)."""
        v = self.value_function(lam)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "psi", "value"])
            for xi, pi, vi in zip(self.x, self.values, v):
                w.writerow([repr(float(xi)), repr(float(pi)), repr(float(vi))])


def solve_bvp(p: HjbProblem, interval: tuple[float, float], boundary: tuple[float, float], n: int) -> Grid1D:
    """Second-order finite differences for the linear desirability equation.

    Central differences are used for the drift term unless the cell Peclet
    number |f| h / Sigma exceeds 1 (|f| h / D > 2 with D = Sigma / 2), where
    a one-sided upwind difference keeps the matrix monotone.
    """
    if p.nvars != 1:
        raise OracleError("the finite-difference oracle is one-dimensional")
    a, b = map(float, interval)
    if n < 3:
        raise OracleError("a grid needs at least 3 nodes")
    sigma = validate_compatibility(p)[0, 0]
    x = np.linspace(a, b, n)
    h = (b - a) / (n - 1)
    xi = x[1:-1]
    f = np.atleast_1d(p.f[0, 0].evaluate(xi[:, None]))
    s = np.atleast_1d(sigma.evaluate(xi[:, None]))
    q = np.atleast_1d(p.q.evaluate(xi[:, None]))
    if np.any(s < 0):
        raise OracleError("negative diffusion coefficient")

    diff = 0.5 * s / h**2
    lower = diff - f / (2 * h)
    upper = diff + f / (2 * h)
    diag = -2 * diff - q / p.lam
    up = np.abs(f) * h > s
    # forward difference where f > 0, backward where f < 0
    fw = up & (f > 0)
    bw = up & (f < 0)
    lower[fw], upper[fw], diag[fw] = diff[fw], diff[fw] + f[fw] / h, -2 * diff[fw] - f[fw] / h - q[fw] / p.lam
    lower[bw], upper[bw], diag[bw] = diff[bw] - f[bw] / h, diff[bw], -2 * diff[bw] + f[bw] / h - q[bw] / p.lam

    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    rhs = np.zeros(m)
    rhs[0] -= lower[0] * boundary[0]
    rhs[-1] -= upper[-1] * boundary[1]
    try:
        inner = solve_banded((1, 1), ab, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise OracleError(f"singular tridiagonal system: {exc}") from None
    if not np.all(np.isfinite(inner)):
        raise OracleError("singular tridiagonal system")
    return Grid1D(a, b, n, np.concatenate([[boundary[0]], inner, [boundary[1]]]))


def boundary_value(p: HjbProblem, x: float) -> float:
    """Desirability data of the boundary component through the point x."""
    for comp in p.boundary:
        if abs(float(comp.factor.evaluate(np.array([[x]]))[0])) <= 1e-12:
            return float(comp.psi.evaluate(np.array([[x]]))[0])
    for pt, v in p.anchors:
        if abs(pt[0] - x) <= 1e-12:
            return float(v)
    raise OracleError(f"no boundary data at x = {x}")


def reference_pieces(p: HjbProblem, n: int) -> list[Grid1D]:
    """Oracle grids on [lo, 0] and [0, hi] with the anchor at the origin.

    Solving the halves separately reproduces the kink at the origin that a
    partitioned relaxation exhibits.
    """
    if p.nvars != 1:
        raise OracleError("the finite-difference oracle is one-dimensional")
    lo, hi = p.domain.box[0]
    anchor = next((v for pt, v in p.anchors if pt == (0.0,)), None)
    if anchor is None or not lo < 0 < hi:
        return [solve_bvp(p, (lo, hi), (boundary_value(p, lo), boundary_value(p, hi)), n)]
    return [
        solve_bvp(p, (lo, 0.0), (boundary_value(p, lo), anchor), n),
        solve_bvp(p, (0.0, hi), (anchor, boundary_value(p, hi)), n),
    ]


def sup_norm_estimate(grid: Grid1D, lam: float) -> float:
    """max over nodes of -lambda log Psi."""
    if np.any(grid.values <= 0):
        raise OracleError("nonpositive desirability on the grid")
    return float(np.max(-lam * np.log(grid.values)))


def richardson_change(p: HjbProblem, interval, boundary, n: int) -> float:
    """Largest nodal change when the grid is refined from n to 2n - 1 nodes."""
    coarse = solve_bvp(p, interval, boundary, n)
    fine = solve_bvp(p, interval, boundary, 2 * n - 1)
    return float(np.max(np.abs(fine.values[::2] - coarse.values)))


def write_pieces(grids: list[Grid1D], lam: float, directory) -> list[Path]:
    out = []
    for k, g in enumerate(grids):
        path = Path(directory) / f"oracle_piece{k}.csv"
        g.to_csv(path, lam)
        out.append(path)
    return out


def psi_boundary_from_cost(phi: float, lam: float) -> float:
    return math.exp(-phi / lam)
