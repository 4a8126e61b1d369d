"""Value functions and feedback laws recovered from desirability bounds.

With V_u = -lambda log Psi_l the feedback u = -R^-1 G^T grad V_u equals
(lambda / Psi_l) R^-1 G^T grad Psi_l, and V_u is a stochastic control
Lyapunov function whenever Psi_l is a subsolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hjb import HjbProblem, RelaxationSolution, validate_compatibility
from .poly import Polynomial
from .sos import SemialgebraicDomain

DESIRABILITY_GUARD = 1e-12
AUDIT_TOL = 1e-6


class NonpositiveDesirability(ValueError):
    """Psi_l is at or below the guard, so -lambda log Psi_l is unusable."""

    def __init__(self, x, value: float, guard: float):
        self.x = np.asarray(x, dtype=float)
        self.value = value
        super().__init__(f"Psi_l({self.x.tolist()}) = {value:.3e} is not above the guard {guard:.1e}")


@dataclass(frozen=True)
class _Piece:
    domain: SemialgebraicDomain | None
    psi: Polynomial
    grad: tuple[Polynomial, ...]
    hess: tuple[tuple[Polynomial, ...], ...]

    @classmethod
    def of(cls, domain, psi: Polynomial) -> "_Piece":
        n = psi.nvars
        grad = tuple(psi.differentiate(i) for i in range(n))
        hess = tuple(tuple(g.differentiate(j) for j in range(n)) for g in grad)
        return cls(domain, psi, grad, hess)


@dataclass(frozen=True)
class ValueFunction:
    """V_u = -lambda log Psi_l, possibly piecewise over a partitioned domain."""

    pieces: tuple[_Piece, ...]
    lam: float
    guard: float = DESIRABILITY_GUARD

    @classmethod
    def from_polynomial(cls, psi_l: Polynomial, lam: float, guard: float = DESIRABILITY_GUARD) -> "ValueFunction":
        return cls((_Piece.of(None, psi_l),), float(lam), guard)

    @classmethod
    def from_solution(cls, sol: RelaxationSolution, guard: float = DESIRABILITY_GUARD) -> "ValueFunction":
        if not sol.feasible:
            raise ValueError(f"degree {sol.degree} relaxation is not feasible ({sol.status})")
        leaves = sol.leaves()
        pieces = tuple(_Piece.of(leaf.problem.domain if len(leaves) > 1 else None, leaf.psi_l) for leaf in leaves)
        return cls(pieces, sol.problem.lam, guard)

    @property
    def nvars(self) -> int:
        return self.pieces[0].psi.nvars

    def piece_for(self, x) -> _Piece:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        for piece in self.pieces:
            if piece.domain is None or piece.domain.contains(x, tol=1e-12)[0]:
                return piece
        return self.pieces[-1]

    def psi(self, x) -> float:
        return float(self.piece_for(x).psi.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def derivatives(self, x) -> tuple[float, np.ndarray, np.ndarray]:
        """Psi_l, its gradient and Hessian at x; raises below the guard."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        piece = self.piece_for(x)
        val = float(piece.psi.evaluate(x)[0])
        if not val > self.guard:
            raise NonpositiveDesirability(x[0], val, self.guard)
        g = np.array([float(d.evaluate(x)[0]) for d in piece.grad])
        h = np.array([[float(d.evaluate(x)[0]) for d in row] for row in piece.hess])
        return val, g, h


@dataclass(frozen=True)
class Controller:
    """u(x) = (lambda / Psi_l) R^-1 G^T grad Psi_l with optional clipping."""

    value: ValueFunction
    problem: HjbProblem
    saturation: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "_rinv", np.linalg.inv(self.problem.R))


def value_at(v: ValueFunction, x) -> float:
    """-lambda log Psi_l(x)."""
    x = np.asarray(x, dtype=float)
    val = v.psi(x)
    if not val > v.guard:
        raise NonpositiveDesirability(x, val, v.guard)
    return -v.lam * math.log(val)


def control_at(c: Controller, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    psi, grad, _ = c.value.derivatives(x)
    G = c.problem.G.evaluate(x)
    u = (c.value.lam / psi) * (c._rinv @ G.T @ grad)
    if c.saturation is not None:
        lim = np.asarray(c.saturation, dtype=float)
        u = np.clip(u, -lim, lim)
    return u


def value_gradient(v: ValueFunction, x) -> np.ndarray:
    psi, grad, _ = v.derivatives(x)
    return -v.lam * grad / psi


@dataclass
class SclfReport:
    points: int
    max_generator: float
    violations: int
    max_strong: float
    strong_violations: int
    worst_points: list[list[float]] = field(default_factory=list)
    guard_failures: list[list[float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.strong_violations == 0 and not self.guard_failures

    def to_dict(self) -> dict:
        return dict(points=self.points, max_generator=self.max_generator, violations=self.violations,
                    max_strong=self.max_strong, strong_violations=self.strong_violations,
                    worst_points=self.worst_points, guard_failures=self.guard_failures, ok=self.ok)


def sclf_audit(v: ValueFunction, p: HjbProblem, grid, tol: float = AUDIT_TOL) -> SclfReport:
    """Evaluate L(V_u) along the closed loop at every grid point.

    L(V) = grad V . (f + G u) + Tr(hess V Sigma) / 2 with u from
    :func:`control_at`.  The strong form adds q + lambda/(2 Psi_l^2)
    grad Psi_l^T Sigma grad Psi_l, which must also stay <= tol.
    """
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if pts.shape[1] != p.nvars:
        pts = pts.reshape(-1, p.nvars)
    if np.any(np.linalg.norm(pts, axis=1) == 0.0):
        raise ValueError("the audit grid must exclude the origin")
    sigma = validate_compatibility(p)
    ctrl = Controller(v, p)
    lam = v.lam
    gen_vals, strong_vals, bad = [], [], []
    for x in pts:
        try:
            psi, g, h = v.derivatives(x)
        except NonpositiveDesirability:
            bad.append(x.tolist())
            continue
        u = control_at(ctrl, x)
        gv = -lam * g / psi
        hv = -lam * h / psi + lam * np.outer(g, g) / psi**2
        S = sigma.evaluate(x)
        drift = p.f.evaluate(x)[:, 0] + p.G.evaluate(x) @ u
        L = float(gv @ drift + 0.5 * np.sum(hv * S))
        gen_vals.append(L)
        strong_vals.append(L + float(p.q.evaluate(x.reshape(1, -1))[0]) + lam / (2 * psi**2) * float(g @ S @ g))
    gen = np.array(gen_vals)
    strong = np.array(strong_vals)
    ok_pts = np.array([x for x in pts if x.tolist() not in bad]) if bad else pts
    worst = ok_pts[np.argsort(-strong)[:5]].tolist() if len(strong) else []
    return SclfReport(
        points=len(pts),
        max_generator=float(gen.max()) if len(gen) else -math.inf,
        violations=int(np.sum(gen > tol)),
        max_strong=float(strong.max()) if len(strong) else -math.inf,
        strong_violations=int(np.sum(strong > tol)),
        worst_points=worst,
        guard_failures=bad,
    )


def suboptimality_bound(epsilon: float, v_sup_norm_estimate: float, lam: float) -> float:
    """-lambda log(1 - min(1, eps / eta)), eta = exp(-||V||_inf / lambda)."""
    if epsilon < 0 or v_sup_norm_estimate < 0:
        raise ValueError("epsilon and the sup-norm estimate must be nonnegative")
    eta = math.exp(-v_sup_norm_estimate / lam)
    ratio = min(1.0, epsilon / eta)
    if ratio >= 1.0:
        return math.inf
    return -lam * math.log1p(-ratio)


@dataclass
class BoundsReport:
    points: int
    lower_violation: float
    upper_violation: float
    max_err_lower: float
    max_err_upper: float
    inverted: bool
    tol: float

    @property
    def ok(self) -> bool:
        return self.lower_violation <= self.tol and self.upper_violation <= self.tol and not self.inverted

    def to_dict(self) -> dict:
        return dict(points=self.points, lower_violation=self.lower_violation,
                    upper_violation=self.upper_violation, max_err_lower=self.max_err_lower,
                    max_err_upper=self.max_err_upper, inverted=self.inverted, tol=self.tol, ok=self.ok)


def _evaluator(obj):
    if hasattr(obj, "evaluate"):
        return lambda pts: np.atleast_1d(obj.evaluate(pts))
    return lambda pts: np.atleast_1d(obj(pts))


def value_bounds_check(psi_l, psi_u, oracle_points, oracle_values, tol: float = 1e-4) -> BoundsReport:
    """Check Psi_l <= Psi* <= Psi_u node-wise, i.e. V_l <= V* <= V_u.

    ``psi_l`` and ``psi_u`` are polynomials or callables on an (N, n) array.
    The comparison is made in Psi-space, where the tolerance is absolute.
    """
    pts = np.asarray(oracle_points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    ref = np.asarray(oracle_values, dtype=float)
    lo = _evaluator(psi_l)(pts)
    hi = _evaluator(psi_u)(pts)
    return BoundsReport(
        points=len(ref),
        lower_violation=float(np.max(lo - ref)),
        upper_violation=float(np.max(ref - hi)),
        max_err_lower=float(np.max(np.abs(lo - ref))),
        max_err_upper=float(np.max(np.abs(hi - ref))),
        inverted=bool(np.any(lo > hi + tol)),
        tol=tol,
    )
