"""Linearly solvable first-exit problems and their SOS relaxations.

A problem is the SDE dx = (f + G u) dt + B dw on a semialgebraic domain,
with running cost q + u^T R u / 2.  Under lambda G R^-1 G^T = B Sigma_eps B^T
the desirability Psi = exp(-V / lambda) solves the linear equation

    L(Psi) - q Psi / lambda = 0,   L(Psi) = f . grad Psi + Tr(hess Psi Sigma) / 2.

:func:`build_relaxation` brackets Psi between a polynomial subsolution
Psi_l and supersolution Psi_u and minimises the gap bound epsilon.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .poly import PolyMatrix, Polynomial, poly_sum
from .sdp import SdpSettings, SdpStatus
from .sos import (
    ParamPolynomial,
    SemialgebraicDomain,
    SosProgram,
    SosSolution,
    boundary_operator,
    domain_operator,
    solve_program,
)

log = logging.getLogger(__name__)

COMPAT_TOL = 1e-10


class HjbError(ValueError):
    pass


class CompatibilityViolation(HjbError):
    pass


class InvalidProblem(HjbError):
    pass


@dataclass(frozen=True)
class BoundaryComponent:
    """Part of the boundary where factor(x) = 0 with desirability data psi.

    In one dimension a linear factor is a single point; such components
    are imposed by evaluation rather than through multipliers.
    """

    factor: Polynomial
    psi: Polynomial
    label: str = ""

    @property
    def is_point(self) -> bool:
        return self.factor.nvars == 1 and self.factor.degree == 1

    @property
    def point(self) -> np.ndarray:
        if not self.is_point:
            raise HjbError("not a point component")
        c1 = self.factor.coefficient((1,))
        c0 = self.factor.coefficient((0,))
        return np.array([-c0 / c1])


@dataclass(frozen=True)
class HjbProblem:
    f: PolyMatrix
    G: PolyMatrix
    B: PolyMatrix
    q: Polynomial
    R: np.ndarray
    sigma_eps: np.ndarray
    lam: float
    domain: SemialgebraicDomain
    boundary: tuple[BoundaryComponent, ...]
    anchors: tuple[tuple[tuple[float, ...], float], ...] = ((),)
    names: tuple[str, ...] = ()
    split_axes: tuple[int, ...] = ()
    label: str = ""

    def __post_init__(self):
        n = self.f.shape[0]
        if self.f.shape != (n, 1):
            raise InvalidProblem(f"drift must be an n x 1 column, got {self.f.shape}")
        if self.G.shape[0] != n or self.B.shape[0] != n:
            raise InvalidProblem("G and B must have n rows")
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        S = np.atleast_2d(np.asarray(self.sigma_eps, dtype=float))
        if R.shape != (self.G.shape[1],) * 2:
            raise InvalidProblem(f"R must be {self.G.shape[1]}x{self.G.shape[1]}")
        if S.shape != (self.B.shape[1],) * 2:
            raise InvalidProblem(f"Sigma_eps must be {self.B.shape[1]}x{self.B.shape[1]}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "sigma_eps", S)
        if self.anchors == ((),):
            object.__setattr__(self, "anchors", (((0.0,) * n, 1.0),))
        object.__setattr__(self, "anchors", tuple((tuple(map(float, p)), float(v)) for p, v in self.anchors))
        object.__setattr__(self, "boundary", tuple(self.boundary))
        if not self.names:
            object.__setattr__(self, "names", tuple(["x"] if n == 1 else [f"x{i + 1}" for i in range(n)]))
        if self.domain.nvars != n or self.q.nvars != n:
            raise InvalidProblem("domain and cost must use the state dimension")
        if not self.lam > 0:
            raise InvalidProblem("lambda must be positive")

    @property
    def nvars(self) -> int:
        return self.f.shape[0]

    @property
    def ninputs(self) -> int:
        return self.G.shape[1]

    @property
    def sigma(self) -> PolyMatrix:
        return self.B @ self.sigma_eps @ self.B.T

    def check_invariants(self, rng: np.random.Generator | None = None, samples: int = 1000) -> list[str]:
        """Validate the standing assumptions; returns notes, raises on hard errors.

        The drift must vanish at the origin and R must be positive definite.
        G(0) and B(0) are only reported, since bounded-noise examples with
        constant gains are common.
        """
        notes = []
        zero = np.zeros(self.nvars)
        if np.max(np.abs(self.f.evaluate(zero))) > 1e-12:
            raise InvalidProblem("drift must vanish at the origin")
        for name, M in (("G", self.G), ("B", self.B)):
            if np.max(np.abs(M.evaluate(zero))) > 1e-12:
                notes.append(f"{name}(0) != 0")
        try:
            np.linalg.cholesky(0.5 * (self.R + self.R.T))
        except np.linalg.LinAlgError:
            raise InvalidProblem("R is not positive definite") from None
        if not np.allclose(self.R, self.R.T):
            raise InvalidProblem("R is not symmetric")
        if abs(self.q.evaluate(zero)) > 1e-12:
            raise InvalidProblem("q must vanish at the origin")
        rng = rng or np.random.default_rng(0)
        pts = self.domain.sample(samples, rng)
        pts = pts[np.linalg.norm(pts, axis=1) > 1e-9]
        if np.any(np.atleast_1d(self.q.evaluate(pts)) <= 0):
            raise InvalidProblem("q is not positive away from the origin")
        return notes


def _constant_matrix(M: PolyMatrix) -> np.ndarray | None:
    if all(p.is_constant() for row in M for p in row):
        return M.evaluate(np.zeros(M.nvars))
    return None


def solve_lambda(G: PolyMatrix, B: PolyMatrix, R, sigma_eps) -> float:
    """lambda from lambda G R^-1 G^T = B Sigma_eps B^T for constant gains."""
    Gc, Bc = _constant_matrix(G), _constant_matrix(B)
    if Gc is None or Bc is None:
        raise CompatibilityViolation("lambda can only be inferred for constant G and B")
    lhs = Gc @ np.linalg.solve(np.atleast_2d(R), Gc.T)
    rhs = Bc @ np.atleast_2d(sigma_eps) @ Bc.T
    denom = float(np.sum(lhs * lhs))
    if denom == 0.0:
        raise CompatibilityViolation("G R^-1 G^T vanishes; lambda undetermined")
    lam = float(np.sum(lhs * rhs)) / denom
    if not lam > 0 or np.max(np.abs(lam * lhs - rhs)) > COMPAT_TOL:
        raise CompatibilityViolation("no positive lambda satisfies the compatibility condition")
    return lam


def validate_compatibility(p: HjbProblem) -> PolyMatrix:
    """Check lambda G R^-1 G^T == B Sigma_eps B^T coefficient-wise; return Sigma."""
    Rinv = np.linalg.inv(p.R)
    lhs = (p.G @ Rinv @ p.G.T).scale(p.lam)
    sigma = p.sigma
    worst = (0.0, None, None)
    r, c = sigma.shape
    for i in range(r):
        for j in range(c):
            diff = lhs[i, j] - sigma[i, j]
            for m, v in diff.items():
                if abs(v) > worst[0]:
                    worst = (abs(v), (i, j), m)
    if worst[0] > COMPAT_TOL:
        (i, j), m = worst[1], worst[2]
        raise CompatibilityViolation(
            f"lambda G R^-1 G^T != B Sigma_eps B^T at entry ({i}, {j}), monomial {m}: "
            f"coefficient difference {worst[0]:.3e}"
        )
    return sigma


def generator(p: HjbProblem, psi: Polynomial, sigma: PolyMatrix | None = None) -> Polynomial:
    """L(psi) = f . grad psi + Tr(hess psi * Sigma) / 2, exactly."""
    sigma = sigma if sigma is not None else p.sigma
    n = p.nvars
    grads = [psi.differentiate(i) for i in range(n)]
    terms = [p.f[i, 0] * grads[i] for i in range(n)]
    for i in range(n):
        for j in range(n):
            if sigma[i, j].is_zero():
                continue
            terms.append(grads[i].differentiate(j) * sigma[i, j] * 0.5)
    return poly_sum(terms, n)


def _param_generator(p: HjbProblem, psi: ParamPolynomial, sigma: PolyMatrix) -> ParamPolynomial:
    return psi.apply(lambda poly: generator(p, poly, sigma))


# --------------------------------------------------------------------------
# partitioning


def _axis_poly(axis: int, nvars: int, sign: float) -> Polynomial:
    return Polynomial.variable(axis, nvars) * sign


def _component_touches(comp: BoundaryComponent, dom: SemialgebraicDomain) -> bool:
    if comp.is_point:
        return bool(dom.contains(comp.point.reshape(1, -1), tol=1e-12)[0])
    pts = dom.grid(4000)
    if len(pts) == 0:
        return False
    vals = np.atleast_1d(comp.factor.evaluate(pts))
    return bool(np.min(vals) <= 1e-12 and np.max(vals) >= -1e-12)


def partition_domain(p: HjbProblem, axis: int) -> list[HjbProblem]:
    """Split along x_axis = 0 into the {x_axis >= 0} and {x_axis <= 0} halves.

    The cut becomes a boundary component carrying the origin anchor value.
    """
    n = p.nvars
    if not 0 <= axis < n:
        raise HjbError(f"axis {axis} out of range")
    if axis in p.split_axes:
        raise HjbError(f"domain already split along axis {axis}")
    lo, hi = p.domain.box[axis]
    if not lo < 0 < hi or not p.domain.contains(np.zeros((1, n)), tol=0.0)[0]:
        raise HjbError("origin is not interior to the domain along the split axis")
    probe = np.zeros((2, n))
    probe[0, axis], probe[1, axis] = 1e-9, -1e-9
    if not np.all(p.domain.contains(probe)):
        raise HjbError("origin is not interior to the domain along the split axis")
    anchor = next((v for pt, v in p.anchors if not any(pt)), 1.0)
    out = []
    for sign, tag in ((1.0, "+"), (-1.0, "-")):
        cut = _axis_poly(axis, n, sign)
        box = list(p.domain.box)
        box[axis] = (0.0, hi) if sign > 0 else (lo, 0.0)
        dom = SemialgebraicDomain(p.domain.generators + (cut,), p.domain.boundary_factors + (cut,), tuple(box))
        comps = [c for c in p.boundary if _component_touches(c, dom)]
        comps.append(BoundaryComponent(cut, Polynomial.constant(anchor, n), f"cut{axis}{tag}"))
        # order factors by position along the axis for readable output
        if n == 1:
            comps.sort(key=lambda c: float(c.point[0]) if c.is_point else 0.0)
        dom = SemialgebraicDomain(p.domain.generators + (cut,), tuple(c.factor for c in comps), tuple(box))
        out.append(replace(p, domain=dom, boundary=tuple(comps), split_axes=p.split_axes + (axis,),
                           label=(p.label + f" x{axis}{'>=' if sign > 0 else '<='}0").strip()))
    # the negative half first so pieces read left to right
    return out[::-1]


# --------------------------------------------------------------------------
# relaxation


@dataclass
class Relaxation:
    """An SOS program together with handles to its key unknowns."""

    program: SosProgram
    psi_l: ParamPolynomial
    psi_u: ParamPolynomial
    epsilon: ParamPolynomial
    degree: int
    families: dict[str, list[str]]
    checks: dict[str, ParamPolynomial] = field(default_factory=dict)


def build_relaxation(p: HjbProblem, degree: int, sigma: PolyMatrix | None = None) -> Relaxation:
    if degree < 2 or degree % 2:
        raise HjbError(f"degree must be even and >= 2, got {degree}")
    psi_deg = max((c.psi.degree for c in p.boundary), default=0)
    if degree < psi_deg:
        raise HjbError(f"degree {degree} cannot represent boundary data of degree {psi_deg}")
    sigma = sigma if sigma is not None else validate_compatibility(p)
    n = p.nvars
    prog = SosProgram(n)
    dom = p.domain
    psi_l = prog.free_polynomial(degree, "psi_l")
    psi_u = prog.free_polynomial(degree, "psi_u")
    eps = prog.new_free("epsilon")
    q_over = p.q * (1.0 / p.lam)
    families: dict[str, list[str]] = {}

    def add(family: str, name: str, poly: ParamPolynomial):
        prog.add_sos(poly, name)
        families.setdefault(family, []).append(name)

    def D(tag: str, domain: SemialgebraicDomain = dom) -> ParamPolynomial:
        return domain_operator(domain, degree, prog, total_degree=degree, name=f"s_{tag}_")

    Lpl = _param_generator(p, psi_l, sigma)
    Lpu = _param_generator(p, psi_u, sigma)
    sub = Lpl - psi_l * q_over
    sup = psi_u * q_over - Lpu
    gap = eps - psi_u + psi_l
    add("subsolution", "subsolution", sub - D("sub"))
    add("supersolution", "supersolution", sup - D("sup"))
    add("gap", "gap", gap - D("gap"))

    # boundary sandwich 0 <= psi_l <= psi <= psi_u
    curved = [c for c in p.boundary if not c.is_point]
    for c in p.boundary:
        if not c.is_point:
            continue
        x = c.point
        val = float(c.psi.evaluate(x))
        tag = c.label or f"x={x[0]:g}"
        pinned = any(np.allclose(pt, x) and v == val for pt, v in p.anchors)
        rows = [("upper", psi_u.at_point(x) - val)]
        if not pinned:
            # where an anchor fixes psi_l = psi these hold with zero slack,
            # which would leave the SDP without a strictly feasible point
            rows = [("lower_nonneg", psi_l.at_point(x)), ("lower", val - psi_l.at_point(x))] + rows
        for kind, expr in rows:
            name = f"boundary_{kind}[{tag}]"
            prog.add_nonnegative(expr, name)
            families.setdefault("boundary", []).append(name)
    if curved:
        sub_dom = SemialgebraicDomain(dom.generators, tuple(c.factor for c in curved), dom.box)
        degs = [max(degree - c.factor.degree, 0) for c in curved]
        for kind, polys in (("lower_nonneg", [psi_l] * len(curved)),
                            ("lower", [ParamPolynomial.fixed(c.psi) - psi_l for c in curved]),
                            ("upper", [psi_u - c.psi for c in curved])):
            for i, poly in enumerate(boundary_operator(polys, sub_dom, degs, prog, name=f"t_{kind}_")):
                add("boundary", f"boundary_{kind}[{curved[i].label or i}]", poly)

    # monotone decrease away from the origin along each axis
    for i in range(n):
        d_i = psi_l.differentiate(i)
        for sign, tag in ((1.0, "+"), (-1.0, "-")):
            half = dom.with_generator(_axis_poly(i, n, sign))
            if not _has_interior(half):
                continue
            add("monotone", f"monotone[x{i}{tag}]", d_i * (-sign) - D(f"mono{i}{tag}", half))

    for k, (pt, val) in enumerate(p.anchors):
        prog.add_equality(psi_l.at_point(np.array(pt)) - val, f"anchor[{k}]")
        families.setdefault("anchor", []).append(f"anchor[{k}]")
    prog.add_nonnegative(eps, "epsilon_nonneg")
    prog.minimize(eps)
    return Relaxation(prog, psi_l, psi_u, eps, degree, families,
                      {"subsolution": sub, "supersolution": sup, "gap": gap})


def _has_interior(dom: SemialgebraicDomain) -> bool:
    pts = dom.grid(4000)
    if len(pts) == 0:
        return False
    strict = np.ones(len(pts), dtype=bool)
    for g in dom.generators:
        strict &= np.atleast_1d(g.evaluate(pts)) > 1e-9
    return bool(strict.any())


@dataclass
class RelaxationSolution:
    degree: int
    status: str
    epsilon: float | None
    psi_l: Polynomial | None
    psi_u: Polynomial | None
    problem: HjbProblem
    diagnostics: dict = field(default_factory=dict)
    pieces: list["RelaxationSolution"] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        if self.pieces:
            return all(p.feasible for p in self.pieces)
        return self.status == SdpStatus.OPTIMAL.value

    def leaves(self) -> list["RelaxationSolution"]:
        if not self.pieces:
            return [self]
        return [leaf for p in self.pieces for leaf in p.leaves()]

    def piece_index(self, pts: np.ndarray) -> np.ndarray:
        """Index of the leaf whose domain holds each point (first match)."""
        pts = np.atleast_2d(pts)
        idx = np.full(len(pts), -1)
        for k, leaf in enumerate(self.leaves()):
            inside = leaf.problem.domain.contains(pts, tol=1e-12) & (idx < 0)
            idx[inside] = k
        return idx

    def _eval(self, attr: str, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.problem.nvars == 1 and pts.shape[0] == 1 and pts.shape[1] > 1:
            pts = pts.T
        out = np.full(len(pts), np.nan)
        leaves = self.leaves()
        idx = self.piece_index(pts)
        for k, leaf in enumerate(leaves):
            sel = idx == k
            poly = getattr(leaf, attr)
            if sel.any() and poly is not None:
                out[sel] = np.atleast_1d(poly.evaluate(pts[sel]))
        return out

    def eval_psi_l(self, pts) -> np.ndarray:
        return self._eval("psi_l", pts)

    def eval_psi_u(self, pts) -> np.ndarray:
        return self._eval("psi_u", pts)


def _settings_or_default(settings: SdpSettings | None) -> SdpSettings:
    return settings or SdpSettings()


def solve_relaxation(p: HjbProblem, degree: int, settings: SdpSettings | None = None) -> RelaxationSolution:
    """Build and solve one rung; partitioned problems are solved per piece."""
    settings = _settings_or_default(settings)
    t0 = time.perf_counter()
    sigma = validate_compatibility(p)
    rel = build_relaxation(p, degree, sigma)
    sol: SosSolution = solve_program(rel.program, settings)
    elapsed = time.perf_counter() - t0
    sdp = sol.compiled.sdp
    diag = dict(
        status=sol.status.value,
        message=sol.message,
        seconds=elapsed,
        constraints=sdp.num_constraints,
        blocks=len(sdp.block_dims),
        largest_block=max(sdp.block_dims, default=0),
        free_variables=sdp.num_free,
        families={k: len(v) for k, v in rel.families.items()},
    )
    if sol.sdp_solution is not None:
        s = sol.sdp_solution
        diag.update(iterations=s.iterations, primal_obj=s.primal_obj, dual_obj=s.dual_obj,
                    residual_primal=s.residuals.primal, residual_dual=s.residuals.dual,
                    residual_gap=s.residuals.gap)
    if sol.feasible:
        psi_l = sol.value(rel.psi_l)
        psi_u = sol.value(rel.psi_u)
        eps = float(sol.value(rel.epsilon).constant_term())
        return RelaxationSolution(degree, sol.status.value, eps, psi_l, psi_u, p, diag)
    return RelaxationSolution(degree, sol.status.value, None, None, None, p, diag)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("HJBSOS_THREADS", "1")))
    except ValueError:
        return 1


def solve_degree(p: HjbProblem, degree: int, settings: SdpSettings | None = None,
                 partition_axes: tuple[int, ...] = (), workers: int | None = None) -> RelaxationSolution:
    """Solve one degree, splitting the domain along ``partition_axes`` first."""
    pieces = [p]
    for axis in partition_axes:
        pieces = [sub for piece in pieces for sub in partition_domain(piece, axis)]
    if len(pieces) == 1:
        return solve_relaxation(p, degree, settings)
    workers = workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda piece: solve_relaxation(piece, degree, settings), pieces))
    else:
        results = [solve_relaxation(piece, degree, settings) for piece in pieces]
    feasible = all(r.feasible for r in results)
    status = SdpStatus.OPTIMAL.value if feasible else next(r.status for r in results if not r.feasible)
    eps = max(r.epsilon for r in results) if feasible else None
    diag = dict(seconds=sum(r.diagnostics.get("seconds", 0.0) for r in results))
    return RelaxationSolution(degree, status, eps, None, None, p, diag, results)


def solve_hierarchy(p: HjbProblem, d_min: int, d_max: int, settings: SdpSettings | None = None,
                    partition_axes: tuple[int, ...] = (), workers: int | None = None) -> list[RelaxationSolution]:
    if d_min > d_max:
        raise HjbError("d_min must not exceed d_max")
    if d_min % 2 or d_max % 2:
        raise HjbError("hierarchy degrees must be even")
    out = []
    for d in range(d_min, d_max + 1, 2):
        res = solve_degree(p, d, settings, partition_axes, workers)
        log.info("degree %d: %s eps=%s (%.1fs)", d, res.status, res.epsilon, res.diagnostics.get("seconds", 0.0))
        out.append(res)
    return out


def epsilon_sequence(results: list[RelaxationSolution], piece: int | None = None) -> list[tuple[int, float]]:
    seq = []
    for r in results:
        target = r.pieces[piece] if piece is not None and r.pieces else r
        if target.feasible:
            seq.append((r.degree, target.epsilon))
    return seq
