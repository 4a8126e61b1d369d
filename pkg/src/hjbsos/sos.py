"""Sum-of-squares constraints compiled to block SDPs.

Decision variables live in an :class:`SosProgram`: free scalars and the
upper-triangular entries of Gram blocks.  A :class:`ParamPolynomial` is an
affine combination of those variables with polynomial weights.  Compiling
a program emits one PSD block per Gram matrix (multipliers and one per SOS
constraint), one equality row per matched monomial, and 1x1 slack blocks
for scalar inequalities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .poly import Monomial, Polynomial, PolynomialError, monomials_up_to, poly_sum
from .sdp import BlockCoo, SdpProblem, SdpSettings, SdpSolution, SdpStatus, solve


class SosError(ValueError):
    pass


class NonlinearError(SosError):
    """Raised when a product would be nonlinear in the decision variables."""


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class SemialgebraicDomain:
    """Omega = {x : g_i(x) >= 0}; boundary = {x : prod h_i(x) = 0}.

    ``box`` is an axis-aligned bounding box used only for sampling and grids.
    """

    generators: tuple[Polynomial, ...]
    boundary_factors: tuple[Polynomial, ...] = ()
    box: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        gens = tuple(self.generators)
        if not gens:
            raise SosError("a domain needs at least one generator")
        nv = gens[0].nvars
        if any(g.nvars != nv for g in gens) or any(h.nvars != nv for h in self.boundary_factors):
            raise SosError("domain polynomials disagree on the number of variables")
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "boundary_factors", tuple(self.boundary_factors))
        box = self.box
        if box is None:
            box = tuple((-1.0, 1.0) for _ in range(nv))
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        if len(box) != nv:
            raise SosError("box dimension does not match the number of variables")
        object.__setattr__(self, "box", box)

    @property
    def nvars(self) -> int:
        return self.generators[0].nvars

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.nvars == 1 and pts.shape[0] == 1 and pts.shape[1] > 1:
            pts = pts.T
        ok = np.ones(len(pts), dtype=bool)
        for g in self.generators:
            ok &= np.atleast_1d(g.evaluate(pts)) >= -tol
        return ok

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        out = []
        count = 0
        while count < n:
            cand = rng.uniform(lo, hi, size=(max(2 * n, 64), self.nvars))
            keep = cand[self.contains(cand)]
            out.append(keep)
            count += len(keep)
        return np.concatenate(out)[:n]

    def grid(self, n: int) -> np.ndarray:
        """Uniform grid points inside the box that satisfy all generators."""
        if self.nvars == 1:
            lo, hi = self.box[0]
            pts = np.linspace(lo, hi, n).reshape(-1, 1)
        else:
            per = max(2, int(round(n ** (1.0 / self.nvars))))
            axes = [np.linspace(lo, hi, per) for lo, hi in self.box]
            pts = np.array(list(itertools.product(*axes)))
        return pts[self.contains(pts, tol=1e-12)]

    def with_generator(self, g: Polynomial) -> "SemialgebraicDomain":
        if any(g == h for h in self.generators):
            return self
        return SemialgebraicDomain(self.generators + (g,), self.boundary_factors, self.box)


# --------------------------------------------------------------------------
# parameterised polynomials


class ParamPolynomial:
    """const + sum_v var_v * poly_v with var_v decision variables."""

    __slots__ = ("nvars", "const", "lin")

    def __init__(self, const: Polynomial, lin: dict[int, Polynomial] | None = None):
        self.nvars = const.nvars
        self.const = const
        self.lin = {v: p for v, p in (lin or {}).items() if not p.is_zero()}

    @classmethod
    def fixed(cls, p: Polynomial) -> "ParamPolynomial":
        return cls(p, {})

    @classmethod
    def of(cls, value, nvars: int) -> "ParamPolynomial":
        if isinstance(value, ParamPolynomial):
            return value
        if isinstance(value, Polynomial):
            return cls.fixed(value)
        return cls.fixed(Polynomial.constant(float(value), nvars))

    @property
    def variables(self) -> list[int]:
        return sorted(self.lin)

    @property
    def degree(self) -> int:
        return max([self.const.degree] + [p.degree for p in self.lin.values()])

    def monomials(self) -> list[Monomial]:
        ms = set(m for m, _ in self.const.items())
        for p in self.lin.values():
            ms.update(m for m, _ in p.items())
        return sorted(ms, key=lambda m: (sum(m), tuple(-a for a in m)))

    def __add__(self, other):
        other = ParamPolynomial.of(other, self.nvars)
        lin = dict(self.lin)
        for v, p in other.lin.items():
            lin[v] = lin[v] + p if v in lin else p
        return ParamPolynomial(self.const + other.const, lin)

    __radd__ = __add__

    def __neg__(self):
        return ParamPolynomial(-self.const, {v: -p for v, p in self.lin.items()})

    def __sub__(self, other):
        return self + (-ParamPolynomial.of(other, self.nvars))

    def __rsub__(self, other):
        return ParamPolynomial.of(other, self.nvars) - self

    def __mul__(self, other):
        if isinstance(other, ParamPolynomial):
            if other.lin and self.lin:
                raise NonlinearError("product of two parameterised polynomials is not affine")
            if not other.lin:
                other = other.const
            else:
                return other * self.const
        return ParamPolynomial(self.const * other, {v: p * other for v, p in self.lin.items()})

    __rmul__ = __mul__

    def apply(self, op: Callable[[Polynomial], Polynomial]) -> "ParamPolynomial":
        """Apply a linear polynomial operator term by term."""
        return ParamPolynomial(op(self.const), {v: op(p) for v, p in self.lin.items()})

    def differentiate(self, var: int) -> "ParamPolynomial":
        return self.apply(lambda p: p.differentiate(var))

    def at_point(self, point) -> "ParamPolynomial":
        """Affine scalar expression obtained by evaluating at a point."""
        zero = (0,) * self.nvars
        return ParamPolynomial(
            Polynomial({zero: self.const.evaluate(point)}, self.nvars),
            {v: Polynomial({zero: p.evaluate(point)}, self.nvars) for v, p in self.lin.items()},
        )

    def value(self, values: np.ndarray) -> Polynomial:
        return poly_sum([self.const] + [p * float(values[v]) for v, p in self.lin.items()], self.nvars)

    def coefficient_map(self) -> dict[Monomial, dict]:
        """monomial -> {var: coefficient, 'const': c}."""
        out: dict[Monomial, dict] = {}
        for m, c in self.const.items():
            out.setdefault(m, {})["const"] = c
        for v, p in self.lin.items():
            for m, c in p.items():
                out.setdefault(m, {})[v] = c
        return out

    def __repr__(self):
        return f"ParamPolynomial(degree={self.degree}, vars={len(self.lin)})"


@dataclass
class GramBlock:
    index: int
    basis: list[Monomial]
    var_start: int
    name: str

    @property
    def size(self) -> int:
        return len(self.basis)

    def var(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        n = self.size
        return self.var_start + i * n - i * (i - 1) // 2 + (j - i)


@dataclass
class SosConstraint:
    name: str
    poly: ParamPolynomial
    gram: GramBlock | None = None


@dataclass
class ScalarConstraint:
    name: str
    expr: ParamPolynomial
    kind: str  # "eq" or "ge"


class SosProgram:
    """Decision variables plus SOS, equality and inequality constraints."""

    def __init__(self, nvars: int):
        self.nvars = nvars
        self.var_kind: list[tuple] = []
        self.var_names: list[str] = []
        self.blocks: list[GramBlock] = []
        self.sos_constraints: list[SosConstraint] = []
        self.scalar_constraints: list[ScalarConstraint] = []
        self.objective: ParamPolynomial = ParamPolynomial.of(0.0, nvars)
        self.labels: dict[str, object] = {}

    # variables --------------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.var_kind)

    def new_free(self, name: str) -> ParamPolynomial:
        v = len(self.var_kind)
        self.var_kind.append(("free",))
        self.var_names.append(name)
        one = Polynomial.constant(1.0, self.nvars)
        return ParamPolynomial(Polynomial.zero(self.nvars), {v: one})

    def free_polynomial(self, degree: int, name: str) -> ParamPolynomial:
        """Polynomial of the given degree with free coefficients."""
        out = ParamPolynomial.of(0.0, self.nvars)
        if degree < 0:
            return out
        for m in monomials_up_to(self.nvars, degree):
            v = len(self.var_kind)
            self.var_kind.append(("free",))
            self.var_names.append(f"{name}[{m}]")
            out.lin[v] = Polynomial.monomial(m)
        return out

    def new_gram(self, basis: list[Monomial], name: str) -> GramBlock:
        blk = GramBlock(len(self.blocks), list(basis), len(self.var_kind), name)
        n = blk.size
        for i in range(n):
            for j in range(i, n):
                self.var_kind.append(("gram", blk.index, i, j))
                self.var_names.append(f"{name}[{i},{j}]")
        self.blocks.append(blk)
        return blk

    def gram_polynomial(self, blk: GramBlock) -> ParamPolynomial:
        lin = {}
        zero = Polynomial.zero(self.nvars)
        for i in range(blk.size):
            for j in range(i, blk.size):
                m = tuple(a + b for a, b in zip(blk.basis[i], blk.basis[j]))
                lin[blk.var(i, j)] = Polynomial({m: 1.0 if i == j else 2.0}, self.nvars)
        return ParamPolynomial(zero, lin)

    def sos_polynomial(self, max_degree: int, name: str) -> tuple[ParamPolynomial, GramBlock]:
        if max_degree < 0 or max_degree % 2:
            raise SosError(f"SOS degree must be even and nonnegative, got {max_degree}")
        blk = self.new_gram(monomials_up_to(self.nvars, max_degree // 2), name)
        return self.gram_polynomial(blk), blk

    # constraints --------------------------------------------------------------
    def add_sos(self, p: ParamPolynomial, name: str) -> SosConstraint:
        p = ParamPolynomial.of(p, self.nvars)
        c = SosConstraint(name, p)
        self.sos_constraints.append(c)
        return c

    def add_equality(self, expr: ParamPolynomial, name: str):
        expr = ParamPolynomial.of(expr, self.nvars)
        if expr.degree > 0:
            raise SosError("scalar constraints must be constant in x")
        self.scalar_constraints.append(ScalarConstraint(name, expr, "eq"))

    def add_nonnegative(self, expr: ParamPolynomial, name: str):
        expr = ParamPolynomial.of(expr, self.nvars)
        if expr.degree > 0:
            raise SosError("scalar constraints must be constant in x")
        self.scalar_constraints.append(ScalarConstraint(name, expr, "ge"))

    def minimize(self, expr: ParamPolynomial):
        expr = ParamPolynomial.of(expr, self.nvars)
        if expr.degree > 0:
            raise SosError("objective must be constant in x")
        self.objective = expr

    # introspection ------------------------------------------------------------
    def dump(self, names: Sequence[str] | None = None) -> str:
        lines = [f"SosProgram: {self.num_vars} decision variables, {len(self.blocks)} multiplier blocks"]
        for b in self.blocks:
            lines.append(f"  multiplier {b.name}: Gram {b.size}x{b.size}")
        for c in self.sos_constraints:
            mult = sorted({self.blocks[self.var_kind[v][1]].name for v in c.poly.lin if self.var_kind[v][0] == "gram"})
            free = sum(1 for v in c.poly.lin if self.var_kind[v][0] == "free")
            lines.append(
                f"  SOS {c.name}: degree {c.poly.degree}, {free} free coefficients, "
                f"multipliers [{', '.join(mult)}]"
            )
        for s in self.scalar_constraints:
            op = "==" if s.kind == "eq" else ">="
            lines.append(f"  scalar {s.name}: affine {op} 0")
        lines.append(f"  minimize: {len(self.objective.lin)} variables")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# the operators


def gram_parameterize(max_degree: int, nvars: int, program: SosProgram | None = None):
    """p(x) = z(x)^T Q z(x) with z the monomials of degree <= max_degree/2.

    Returns ``(param_polynomial, gram_block)``; a new program is created if
    none is given (available as ``gram_block.program``).
    """
    if max_degree % 2:
        raise SosError(f"Gram parameterisation needs an even degree, got {max_degree}")
    program = program or SosProgram(nvars)
    p, blk = program.sos_polynomial(max_degree, f"gram{len(program.blocks)}")
    blk.program = program
    return p, blk


def _largest_even(k: int) -> int:
    return k - (k % 2)


def domain_operator(domain: SemialgebraicDomain, multiplier_degree: int,
                    program: SosProgram, total_degree: int | None = None,
                    name: str = "s") -> ParamPolynomial:
    """sum over nu in {0,1}^k of s_nu * g_1^nu_1 ... g_k^nu_k with fresh SOS s_nu.

    Every s_nu has degree <= ``multiplier_degree``; when ``total_degree``
    is given each s_nu is further limited so that deg(s_nu * prod g^nu) does
    not exceed it, and products already above it are left out.
    """
    if multiplier_degree < 0 or multiplier_degree % 2:
        raise SosError("multiplier degree must be even and nonnegative")
    out = ParamPolynomial.of(0.0, domain.nvars)
    for nu in itertools.product((0, 1), repeat=len(domain.generators)):
        prod = Polynomial.constant(1.0, domain.nvars)
        for flag, g in zip(nu, domain.generators):
            if flag:
                prod = prod * g
        deg = multiplier_degree
        if total_degree is not None:
            deg = min(deg, _largest_even(total_degree - prod.degree))
        if deg < 0:
            continue
        s, _ = program.sos_polynomial(deg, f"{name}{''.join(map(str, nu))}")
        out = out + s * prod
    return out


def boundary_operator(p, domain: SemialgebraicDomain, multiplier_degree,
                      program: SosProgram, name: str = "t") -> list[ParamPolynomial]:
    """{p_i - t_i h_i} for each boundary factor h_i with t_i free polynomials.

    ``p`` may be one polynomial or one per boundary factor; likewise
    ``multiplier_degree``.
    """
    factors = domain.boundary_factors
    if not factors:
        raise SosError("domain has no boundary factors")
    ps = list(p) if isinstance(p, (list, tuple)) else [p] * len(factors)
    degs = list(multiplier_degree) if isinstance(multiplier_degree, (list, tuple)) else [multiplier_degree] * len(factors)
    if len(ps) != len(factors) or len(degs) != len(factors):
        raise SosError("one polynomial and degree per boundary factor required")
    out = []
    for i, (pi, h, d) in enumerate(zip(ps, factors, degs)):
        t = program.free_polynomial(d, f"{name}{i}")
        out.append(ParamPolynomial.of(pi, domain.nvars) - t * h)
    return out


# --------------------------------------------------------------------------
# compilation


@dataclass
class RowInfo:
    source: str  # "sos" / "eq" / "ge"
    index: int
    monomial: Monomial | None


@dataclass
class CompiledProgram:
    program: SosProgram
    sdp: SdpProblem
    rows: list[RowInfo]
    free_vars: list[int]          # SDP free column -> program variable
    block_of_gram: list[int]      # program gram block -> SDP block
    constraint_blocks: list[int]  # SOS constraint -> SDP block of its Gram
    slack_blocks: list[int]       # inequality -> SDP 1x1 block
    trivially_infeasible: list[str] = field(default_factory=list)

    def values(self, sol: SdpSolution) -> np.ndarray:
        """Program variable values from an SDP solution."""
        vals = np.zeros(self.program.num_vars)
        for col, v in enumerate(self.free_vars):
            vals[v] = sol.w[col]
        for v, kind in enumerate(self.program.var_kind):
            if kind[0] == "gram":
                _, b, i, j = kind
                vals[v] = sol.X[self.block_of_gram[b]][i, j]
        return vals


def compile_program(program: SosProgram) -> CompiledProgram:
    nv = program.nvars
    # one Gram per SOS constraint
    constraint_grams = []
    for c in program.sos_constraints:
        deg = c.poly.degree
        half = (deg + 1) // 2 if deg >= 0 else 0
        basis = monomials_up_to(nv, half)
        constraint_grams.append(basis)

    kinds = program.var_kind
    free_vars = [v for v, k in enumerate(kinds) if k[0] == "free"]
    free_col = {v: i for i, v in enumerate(free_vars)}
    dims = [b.size for b in program.blocks]
    block_of_gram = list(range(len(program.blocks)))
    constraint_blocks = []
    for basis in constraint_grams:
        constraint_blocks.append(len(dims))
        dims.append(len(basis))
    ineqs = [s for s in program.scalar_constraints if s.kind == "ge"]
    slack_blocks = []
    for _ in ineqs:
        slack_blocks.append(len(dims))
        dims.append(1)

    coo = [([], [], [], []) for _ in dims]
    F_rows, F_cols, F_vals = [], [], []
    b = []
    rows: list[RowInfo] = []
    trivial = []

    def emit(entries: dict, info: RowInfo, extra=()):
        """entries: var -> coef plus optional 'const'; extra: (block, i, j, coef)."""
        k = len(b)
        const = entries.get("const", 0.0)
        nonzero = False
        for v, a in entries.items():
            if v == "const" or a == 0.0:
                continue
            nonzero = True
            kind = kinds[v]
            if kind[0] == "free":
                F_rows.append(k)
                F_cols.append(free_col[v])
                F_vals.append(a)
            else:
                _, blk, i, j = kind
                _push(coo[block_of_gram[blk]], k, i, j, a)
        for blk, i, j, a in extra:
            nonzero = True
            _push(coo[blk], k, min(i, j), max(i, j), a)
        if not nonzero:
            if abs(const) > 0.0:
                trivial.append(f"{info.source}:{info.index}")
            return
        b.append(-const)
        rows.append(info)

    for ci, (c, basis, blk) in enumerate(zip(program.sos_constraints, constraint_grams, constraint_blocks)):
        cmap = c.poly.coefficient_map()
        gram_terms: dict[Monomial, list] = {}
        for i in range(len(basis)):
            for j in range(i, len(basis)):
                m = tuple(x + y for x, y in zip(basis[i], basis[j]))
                gram_terms.setdefault(m, []).append((i, j, -1.0 if i == j else -2.0))
        for m in sorted(set(cmap) | set(gram_terms), key=lambda m: (sum(m), tuple(-a for a in m))):
            extra = [(blk, i, j, a) for i, j, a in gram_terms.get(m, [])]
            emit(cmap.get(m, {}), RowInfo("sos", ci, m), extra)

    for si, s in enumerate(program.scalar_constraints):
        cmap = s.expr.coefficient_map()
        entries = cmap.get((0,) * nv, {})
        if s.kind == "eq":
            emit(entries, RowInfo("eq", si, None))
        else:
            blk = slack_blocks[ineqs.index(s)]
            emit(entries, RowInfo("ge", si, None), [(blk, 0, 0, -1.0)])

    m = len(b)
    A = []
    for n, (ks, iis, jjs, vs) in zip(dims, coo):
        A.append(BlockCoo(np.array(ks, dtype=np.int64), np.array(iis, dtype=np.int64),
                          np.array(jjs, dtype=np.int64), np.array(vs, dtype=float)))
    F = np.zeros((m, len(free_vars)))
    np.add.at(F, (np.array(F_rows, dtype=np.int64), np.array(F_cols, dtype=np.int64)), np.array(F_vals))
    C = [np.zeros((n, n)) for n in dims]
    c_free = np.zeros(len(free_vars))
    obj = program.objective.coefficient_map().get((0,) * nv, {})
    for v, a in obj.items():
        if v == "const":
            continue
        kind = kinds[v]
        if kind[0] == "free":
            c_free[free_col[v]] += a
        else:
            _, blk, i, j = kind
            cb = C[block_of_gram[blk]]
            if i == j:
                cb[i, i] += a
            else:
                cb[i, j] += a / 2
                cb[j, i] += a / 2
    sdp = SdpProblem(tuple(dims), tuple(A), np.array(b), tuple(C), F, c_free)
    return CompiledProgram(program, sdp, rows, free_vars, block_of_gram, constraint_blocks,
                           slack_blocks, trivial)


def _push(store, k, i, j, a):
    ks, iis, jjs, vs = store
    ks.append(k)
    iis.append(i)
    jjs.append(j)
    # off-diagonal entries are counted twice by <A, X>
    vs.append(a if i == j else a / 2.0)


def decompile(compiled: CompiledProgram) -> list[dict[Monomial, dict]]:
    """Rebuild each SOS constraint's coefficient map from the SDP rows.

    The constraint's own Gram block is excluded, so the result should equal
    ``constraint.poly.coefficient_map()`` exactly.
    """
    prog = compiled.program
    sdp = compiled.sdp
    out: list[dict[Monomial, dict]] = [dict() for _ in prog.sos_constraints]
    gram_var = {}
    for v, kind in enumerate(prog.var_kind):
        if kind[0] == "gram":
            gram_var[(compiled.block_of_gram[kind[1]], kind[2], kind[3])] = v
    own = set(compiled.constraint_blocks)
    row_entries: dict[int, dict] = {}
    for blk, coo in enumerate(sdp.A):
        if blk in own or blk in compiled.slack_blocks:
            continue
        for k, i, j, val in zip(coo.k, coo.i, coo.j, coo.v):
            a = val if i == j else 2.0 * val
            row_entries.setdefault(int(k), {})[gram_var[(blk, int(i), int(j))]] = a
    for k, j in zip(*np.nonzero(sdp.F)):
        row_entries.setdefault(int(k), {})[compiled.free_vars[j]] = sdp.F[k, j]
    for k, info in enumerate(compiled.rows):
        if info.source != "sos":
            continue
        entries = dict(row_entries.get(k, {}))
        if sdp.b[k] != 0.0:
            entries["const"] = -sdp.b[k]
        if entries:
            out[info.index][info.monomial] = entries
    return out


@dataclass
class SosSolution:
    status: SdpStatus
    values: np.ndarray | None
    sdp_solution: SdpSolution | None
    compiled: CompiledProgram
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == SdpStatus.OPTIMAL

    def value(self, p: ParamPolynomial) -> Polynomial:
        if self.values is None:
            raise SosError("no solution values available")
        return p.value(self.values)

    def gram(self, blk: GramBlock) -> np.ndarray:
        return self.sdp_solution.X[self.compiled.block_of_gram[blk.index]]

    def constraint_gram(self, index: int) -> np.ndarray:
        return self.sdp_solution.X[self.compiled.constraint_blocks[index]]


def solve_program(program: SosProgram, settings: SdpSettings | None = None) -> SosSolution:
    compiled = compile_program(program)
    if compiled.trivially_infeasible:
        return SosSolution(SdpStatus.INFEASIBLE, None, None, compiled,
                           "constant rows violated: " + ", ".join(compiled.trivially_infeasible))
    sol = solve(compiled.sdp, settings)
    values = compiled.values(sol)
    return SosSolution(sol.status, values, sol, compiled, sol.message)


def check_sos(p: Polynomial, settings: SdpSettings | None = None) -> list[Polynomial] | None:
    """Squares f_i with sum f_i^2 == p, or ``None`` when p is not SOS."""
    if p.is_zero():
        return []
    if p.degree % 2:
        raise SosError(f"odd degree {p.degree} polynomial cannot be SOS")
    prog = SosProgram(p.nvars)
    prog.add_sos(ParamPolynomial.fixed(p), "p")
    res = solve_program(prog, settings)
    if res.status == SdpStatus.INFEASIBLE:
        return None
    if res.status != SdpStatus.OPTIMAL:
        raise SosError(f"SDP solve failed: {res.status.value} {res.message}")
    Q = res.constraint_gram(0)
    basis = monomials_up_to(p.nvars, max(p.degree, 0) // 2)
    return _factor_gram(0.5 * (Q + Q.T), basis, p)


SQUARES_TOL = 1e-9


def _factor_gram(Q: np.ndarray, basis: list[Monomial], p: Polynomial) -> list[Polynomial]:
    """Fewest squares reproducing p, refitted from an interior-point Gram.

    Interior-point Grams carry small spurious mass on null directions, which
    also tilts the leading eigenvectors.  Basis monomials with negligible
    diagonal are dropped first; then for r = 1, 2, ... the top-r eigen-factor
    W is refined by Gauss-Newton on coeffs(W W^T) = p, and the first factor
    that matches is returned.
    """
    diag = np.diag(Q)
    keep = np.flatnonzero(diag > 1e-7 * max(float(np.max(diag, initial=0.0)), 1e-300))
    sub = [basis[k] for k in keep]
    Qs = Q[np.ix_(keep, keep)]
    n = len(sub)
    rows: dict[Monomial, list[tuple[int, int]]] = {}
    for i in range(n):
        for j in range(n):
            m = tuple(a + b for a, b in zip(sub[i], sub[j]))
            rows.setdefault(m, []).append((i, j))
    for m, _ in p.items():
        rows.setdefault(m, [])
    mons = list(rows)
    target = np.array([p.coefficient(m) for m in mons])
    scale = max(1.0, float(np.max(np.abs(target), initial=0.0)))
    vals, vecs = np.linalg.eigh(Qs)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]

    def coeffs(W):
        G = W @ W.T
        return np.array([sum(G[i, j] for i, j in rows[m]) for m in mons])

    def jacobian(W):
        r = W.shape[1]
        J = np.zeros((len(mons), n, r))
        for k, m in enumerate(mons):
            for i, j in rows[m]:
                J[k, i] += W[j]
                J[k, j] += W[i]
        return J.reshape(len(mons), n * r)

    best = None
    for r in range(1, n + 1):
        if vals[r - 1] <= 0:
            break
        W = vecs[:, :r] * np.sqrt(vals[:r])
        for _ in range(30):
            res = target - coeffs(W)
            if np.max(np.abs(res)) <= SQUARES_TOL * scale:
                break
            dw, *_ = np.linalg.lstsq(jacobian(W), res, rcond=None)
            W = W + dw.reshape(n, r)
        if np.max(np.abs(target - coeffs(W))) <= SQUARES_TOL * scale:
            U, sv, _ = np.linalg.svd(W, full_matrices=False)
            best = sv**2, U
            break
    if best is None:
        best = np.maximum(vals, 0.0), vecs
    lam, W = best
    out = []
    for l, w in sorted(zip(lam, W.T), key=lambda t: -t[0]):
        q = Polynomial(dict(zip(sub, math.sqrt(l) * w)), p.nvars)
        if not q.is_zero():
            out.append(q)
    return out
