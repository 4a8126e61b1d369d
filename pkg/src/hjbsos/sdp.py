"""Dense primal-dual interior-point solver for small block-diagonal SDPs.

Primal form::

    minimize    <C, X> + c_free . w
    subject to  <A_k, X> + (F w)_k = b_k      k = 1..m
                X = diag(X_1, ..., X_B) PSD,  w free

Dual form::

    maximize    b . y
    subject to  S = C - sum_k y_k A_k  PSD,   F^T y = c_free

Search directions use Nesterov-Todd scaling with a Mehrotra
predictor-corrector.  Free variables enter the Newton system as an
augmented (indefinite) block rather than being split into PSD pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


class SdpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


class SdpError(ValueError):
    pass


@dataclass
class BlockCoo:
    """Upper-triangular (i <= j) entries of the A_k restricted to one block."""

    k: np.ndarray
    i: np.ndarray
    j: np.ndarray
    v: np.ndarray

    @classmethod
    def empty(cls) -> "BlockCoo":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), np.zeros(0))


@dataclass
class SdpProblem:
    block_dims: tuple[int, ...]
    A: tuple[BlockCoo, ...]
    b: np.ndarray
    C: tuple[np.ndarray, ...]
    F: np.ndarray
    c_free: np.ndarray

    def __post_init__(self):
        self.block_dims = tuple(int(n) for n in self.block_dims)
        self.b = np.asarray(self.b, dtype=float)
        m = len(self.b)
        self.C = tuple(np.asarray(c, dtype=float) for c in self.C)
        if self.F is None:
            self.F = np.zeros((m, 0))
        self.F = np.asarray(self.F, dtype=float).reshape(m, -1)
        self.c_free = np.asarray(self.c_free if self.c_free is not None else [], dtype=float)
        if len(self.A) != len(self.block_dims) or len(self.C) != len(self.block_dims):
            raise SdpError("one A and one C entry required per block")
        if self.c_free.shape != (self.F.shape[1],):
            raise SdpError("c_free length must equal the number of free variables")
        for n, coo, c in zip(self.block_dims, self.A, self.C):
            if n < 1:
                raise SdpError("block dimensions must be positive")
            if c.shape != (n, n):
                raise SdpError("objective block has wrong shape")
            if np.max(np.abs(c - c.T), initial=0.0) > 1e-12:
                raise SdpError("objective block is not symmetric")
            if len(coo.k) and (coo.k.max() >= m or coo.k.min() < 0):
                raise SdpError("constraint index out of range")
            if len(coo.i) and (np.any(coo.i > coo.j) or coo.j.max() >= n):
                raise SdpError("constraint entries must be upper triangular and in range")

    # construction -----------------------------------------------------------
    @classmethod
    def from_dense(cls, block_dims, constraints, b, C, F=None, c_free=None) -> "SdpProblem":
        """Build from dense data.

        ``constraints[k]`` is a list with one symmetric array per block (or
        ``None`` for a zero block); ``C`` is a list of symmetric arrays.
        """
        block_dims = tuple(block_dims)
        b = np.asarray(b, dtype=float)
        if len(constraints) != len(b):
            raise SdpError("number of constraint matrices must equal len(b)")
        coos = []
        for bi, n in enumerate(block_dims):
            ks, iis, jjs, vs = [], [], [], []
            for k, blocks in enumerate(constraints):
                a = blocks[bi]
                if a is None:
                    continue
                a = np.asarray(a, dtype=float)
                if a.shape != (n, n):
                    raise SdpError(f"constraint {k} block {bi} has wrong shape")
                if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
                    raise SdpError(f"constraint {k} block {bi} is not symmetric")
                ii, jj = np.nonzero(np.triu(a))
                ks.extend([k] * len(ii))
                iis.extend(ii)
                jjs.extend(jj)
                vs.extend(a[ii, jj])
            coos.append(
                BlockCoo(
                    np.array(ks, dtype=np.int64),
                    np.array(iis, dtype=np.int64),
                    np.array(jjs, dtype=np.int64),
                    np.array(vs, dtype=float),
                )
            )
        C = [np.zeros((n, n)) if c is None else np.asarray(c, dtype=float) for n, c in zip(block_dims, C)]
        m = len(b)
        F = np.zeros((m, 0)) if F is None else np.asarray(F, dtype=float).reshape(m, -1)
        c_free = np.zeros(F.shape[1]) if c_free is None else c_free
        return cls(block_dims, tuple(coos), b, tuple(C), F, np.asarray(c_free, dtype=float))

    # basic queries ------------------------------------------------------------
    @property
    def num_constraints(self) -> int:
        return len(self.b)

    @property
    def num_free(self) -> int:
        return self.F.shape[1]

    def constraint_matrix(self, k: int) -> list[np.ndarray]:
        out = []
        for n, coo in zip(self.block_dims, self.A):
            a = np.zeros((n, n))
            sel = coo.k == k
            a[coo.i[sel], coo.j[sel]] = coo.v[sel]
            a[coo.j[sel], coo.i[sel]] = coo.v[sel]
            out.append(a)
        return out

    def dense_stacks(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per block: (constraint rows touching the block, dense (m_b, n, n) stack)."""
        out = []
        for n, coo in zip(self.block_dims, self.A):
            rows = np.unique(coo.k)
            pos = np.searchsorted(rows, coo.k)
            stack = np.zeros((len(rows), n, n))
            stack[pos, coo.i, coo.j] = coo.v
            stack[pos, coo.j, coo.i] = coo.v
            out.append((rows, stack))
        return out

    def apply_A(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.num_constraints)
        for coo, x in zip(self.A, X):
            off = coo.i != coo.j
            vals = coo.v * x[coo.i, coo.j] * np.where(off, 2.0, 1.0)
            np.add.at(out, coo.k, vals)
        return out

    def apply_AT(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for n, coo in zip(self.block_dims, self.A):
            a = np.zeros((n, n))
            vals = coo.v * y[coo.k]
            np.add.at(a, (coo.i, coo.j), vals)
            off = coo.i != coo.j
            np.add.at(a, (coo.j[off], coo.i[off]), vals[off])
            out.append(a)
        return out

    def objective(self, X, w) -> float:
        return float(sum(np.sum(c * x) for c, x in zip(self.C, X)) + self.c_free @ w)

    # export ---------------------------------------------------------------------
    def to_sdpa(self) -> str:
        """Sparse SDPA text of the dual form (free-variable equalities as an LP block).

        SDPA's primal ``min c.x s.t. sum F_i x_i - F_0 PSD`` is matched with
        x = y, c = -b, F_i = -A_i, F_0 = -C.
        """
        m = self.num_constraints
        p = self.num_free
        dims = list(self.block_dims) + ([-2 * p] if p else [])
        lines = [f"{m}", f"{len(dims)}", " ".join(str(d) for d in dims)]
        lines.append(" ".join(_g17(-v) for v in self.b))
        entries = []
        for bi, c in enumerate(self.C):
            ii, jj = np.nonzero(np.triu(c))
            for i, j in zip(ii, jj):
                entries.append((0, bi + 1, i + 1, j + 1, -c[i, j]))
        if p:
            lp = len(self.block_dims) + 1
            for j in range(p):
                entries.append((0, lp, j + 1, j + 1, self.c_free[j]))
                entries.append((0, lp, p + j + 1, p + j + 1, -self.c_free[j]))
        for bi, coo in enumerate(self.A):
            for k, i, j, v in zip(coo.k, coo.i, coo.j, coo.v):
                entries.append((k + 1, bi + 1, i + 1, j + 1, -v))
        if p:
            lp = len(self.block_dims) + 1
            for k, j in zip(*np.nonzero(self.F)):
                entries.append((k + 1, lp, j + 1, j + 1, self.F[k, j]))
                entries.append((k + 1, lp, p + j + 1, p + j + 1, -self.F[k, j]))
        entries.sort(key=lambda e: e[:4])
        for k, bi, i, j, v in entries:
            lines.append(f"{k} {bi} {i} {j} {_g17(v)}")
        return "\n".join(lines) + "\n"


def _g17(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class SdpSettings:
    max_iter: int = 100
    tol: float = 1e-8
    verbosity: int = 0
    step_fraction: float = 0.98
    max_condition: float = 1e14
    refine_steps: int = 3
    newton_residual_limit: float = 1e-4


@dataclass
class Residuals:
    primal: float
    dual: float
    gap: float


@dataclass
class SdpSolution:
    X: list[np.ndarray]
    y: np.ndarray
    w: np.ndarray
    S: list[np.ndarray]
    status: SdpStatus
    primal_obj: float
    dual_obj: float
    residuals: Residuals
    iterations: int
    trace: list[dict] = field(default_factory=list)
    certificate: np.ndarray | None = None
    message: str = ""

    @property
    def gaps(self) -> Residuals:
        return self.residuals


def residuals(problem: SdpProblem, sol: SdpSolution) -> Residuals:
    """Absolute residuals: max |<A_k,X> + (Fw)_k - b_k|, ||C - A^T y - S||_inf, |pobj - dobj|."""
    w = sol.w if sol.w is not None else np.zeros(problem.num_free)
    rp = problem.apply_A(sol.X) + problem.F @ w - problem.b
    primal = float(np.max(np.abs(rp), initial=0.0))
    aty = problem.apply_AT(sol.y)
    S = sol.S if sol.S is not None else [c - a for c, a in zip(problem.C, aty)]
    dual = max(
        (float(np.max(np.abs(c - a - s), initial=0.0)) for c, a, s in zip(problem.C, aty, S)),
        default=0.0,
    )
    if problem.num_free:
        dual = max(dual, float(np.max(np.abs(problem.F.T @ sol.y - problem.c_free))))
    gap = abs(problem.objective(sol.X, w) - float(problem.b @ sol.y))
    return Residuals(primal, dual, gap)


# -----------------------------------------------------------------------------
# solver internals


class _IllConditioned(RuntimeError):
    pass


def _sym(a):
    return 0.5 * (a + a.T)


def _chol(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(_sym(a))
        vals = np.maximum(vals, 1e-300)
        # QR of the symmetric square root gives a triangular factor
        _, r = np.linalg.qr((vecs * np.sqrt(vals)).T)
        return r.T * np.sign(np.diag(r))


def _max_step_diag(d, v):
    """Largest alpha with diag(d) + alpha v PSD (inf when v is PSD)."""
    r = 1.0 / np.sqrt(d)
    lam = np.linalg.eigvalsh(_sym(v * r[:, None] * r[None, :]))[0]
    return math.inf if lam >= 0 else -1.0 / lam


class _Scaled:
    """Row-normalised and magnitude-scaled copy of a problem."""

    def __init__(self, p: SdpProblem):
        self.p = p
        m = p.num_constraints
        norms = np.zeros(m)
        for coo in p.A:
            wt = np.where(coo.i == coo.j, 1.0, 2.0)
            np.add.at(norms, coo.k, wt * coo.v**2)
        norms += np.sum(p.F**2, axis=1)
        norms = np.sqrt(norms)
        self.row = np.where(norms > 0, norms, 1.0)
        self.A = []
        for coo in p.A:
            self.A.append(BlockCoo(coo.k, coo.i, coo.j, coo.v / self.row[coo.k]))
        self.F = p.F / self.row[:, None]
        b = p.b / self.row
        self.bscale = max(1.0, float(np.linalg.norm(b)))
        cnorm = math.sqrt(sum(float(np.sum(c * c)) for c in p.C) + float(p.c_free @ p.c_free))
        self.cscale = max(1.0, cnorm)
        self.b = b / self.bscale
        self.C = [c / self.cscale for c in p.C]
        self.c_free = p.c_free / self.cscale
        self.problem = SdpProblem(p.block_dims, tuple(self.A), self.b, tuple(self.C), self.F, self.c_free)

    def unscale(self, X, y, w, S):
        X = [x * self.bscale for x in X]
        w = w * self.bscale
        y = y * self.cscale / self.row
        S = [s * self.cscale for s in S]
        return X, y, w, S


def _scaled_constraints(stacks, Gs, m) -> np.ndarray:
    """Rows vec(G^T A_k G), so that <A_k, W A_l W> is a plain dot product."""
    cols = []
    for (rows, stack), g in zip(stacks, Gs):
        n = g.shape[0]
        blk = np.zeros((m, n * n))
        if len(rows):
            blk[rows] = (g.T @ stack @ g).reshape(len(rows), n * n)
        cols.append(blk)
    return np.hstack(cols) if cols else np.zeros((m, 0))


def _polish(problem: SdpProblem, X, w):
    """Least-change correction of (X, w) onto the affine constraints.

    The step is dX = L U L^T with L = chol(X), so X + dX = L (I + U) L^T stays
    PSD whenever ||U||_2 < 1.  Returns None when that cannot be guaranteed.
    """
    m = problem.num_constraints
    Ls = [_chol(x) for x in X]
    rp = problem.b - problem.apply_A(X) - problem.F @ w
    M = np.hstack([_scaled_constraints(problem.dense_stacks(), Ls, m), problem.F])
    z = np.linalg.lstsq(M, rp, rcond=None)[0]
    out, k = [], 0
    for L in Ls:
        n = L.shape[0]
        u = _sym(z[k:k + n * n].reshape(n, n))
        k += n * n
        if n and np.linalg.norm(u, 2) >= 0.5:
            return None
        out.append(_sym(L @ (np.eye(n) + u) @ L.T))
    return out, w + z[k:]


class _FreeBasis:
    """SVD of F: range basis Y and complement N of the free-variable columns."""

    def __init__(self, F: np.ndarray):
        m, p = F.shape
        if p == 0:
            self.Y = np.zeros((m, 0))
            self.N = np.eye(m)
            self.s = np.zeros(0)
            self.V = np.zeros((0, 0))
            return
        U, s, Vt = np.linalg.svd(F, full_matrices=True)
        r = int(np.sum(s > s[0] * 1e-12)) if s.size and s[0] > 0 else 0
        self.Y, self.N = U[:, :r], U[:, r:]
        self.s = s[:r]
        self.V = Vt[:r].T


class _ReducedSchur:
    """Newton solves  M dy + F dw = h,  F^T dy = rf  with M = At At^T.

    dy is split into a particular part fixing F^T dy and a null-space part;
    the latter solves the reduced Schur system through a QR factor of
    At^T N, which avoids forming (and squaring the conditioning of) M.
    """

    def __init__(self, At: np.ndarray, free: _FreeBasis):
        self.At = At
        self.free = free
        B = At.T @ free.N
        if B.shape[1]:
            self.Q, self.R = sla.qr(B, mode="economic")
            rc, _ = sla.lapack.dtrcon(self.R, norm="1")
            if not np.isfinite(rc) or rc <= 0.0:
                raise _IllConditioned("singular Newton system")
            self.condition = 1.0 / rc**2
        else:
            self.Q, self.R = np.zeros((B.shape[0], 0)), np.zeros((0, 0))
            self.condition = 1.0

    def solve(self, rt, rp, rf):
        """Solve u - At^T dy = rt,  At u + F dw = rp,  F^T dy = rf."""
        fb, At = self.free, self.At
        dy = fb.Y @ ((fb.V.T @ rf) / fb.s) if fb.s.size else np.zeros(len(rp))
        c = rt + At.T @ dy
        u = c
        if self.R.shape[0]:
            # B^T B xi = N^T rp - B^T c, with B = Q R
            t = sla.solve_triangular(self.R, fb.N.T @ rp, trans="T") - self.Q.T @ c
            xi = sla.solve_triangular(self.R, t)
            dy = dy + fb.N @ xi
            u = c + self.Q @ (self.R @ xi)
        if fb.s.size:
            dw = fb.V @ ((fb.Y.T @ (rp - At @ u)) / fb.s)
        else:
            dw = np.zeros(0)
        return u, dy, dw


def solve(problem: SdpProblem, settings: SdpSettings | None = None, **kw) -> SdpSolution:
    """Solve ``problem`` with a primal-dual path-following method."""
    settings = settings or SdpSettings(**kw)
    sc = _Scaled(problem)
    P = sc.problem
    m = P.num_constraints
    p = P.num_free
    dims = P.block_dims
    ntot = sum(dims)
    stacks = P.dense_stacks()
    free = _FreeBasis(P.F)

    # starting point: multiples of the identity
    anorms = np.zeros(m)
    for coo in P.A:
        np.add.at(anorms, coo.k, np.abs(coo.v))
    xi = max(10.0, math.sqrt(ntot), ntot * float(np.max((1 + np.abs(P.b)) / (1 + anorms), initial=1.0)))
    cn = math.sqrt(sum(float(np.sum(c * c)) for c in P.C))
    eta = max(10.0, math.sqrt(ntot), 1.0 + cn)
    X = [xi * np.eye(n) for n in dims]
    S = [eta * np.eye(n) for n in dims]
    y = np.zeros(m)
    w = np.zeros(p)

    trace: list[dict] = []
    status = SdpStatus.MAX_ITER
    message = ""
    certificate = None
    tol = settings.tol
    it = 0
    bnorm = float(np.linalg.norm(P.b))
    cnorm_all = math.sqrt(cn**2 + float(P.c_free @ P.c_free))
    newton_res = [0.0]
    recent: list = []

    for it in range(settings.max_iter + 1):
        Ax = P.apply_A(X)
        Rp = P.b - Ax - P.F @ w
        ATy = P.apply_AT(y)
        Rd = [c - a - s for c, a, s in zip(P.C, ATy, S)]
        rf = P.c_free - P.F.T @ y
        pobj = P.objective(X, w)
        dobj = float(P.b @ y)
        xs = sum(float(np.sum(x * s)) for x, s in zip(X, S))
        mu = xs / ntot
        rel_p = float(np.linalg.norm(Rp)) / (1 + bnorm)
        rel_d = (math.sqrt(sum(float(np.sum(r * r)) for r in Rd)) + float(np.linalg.norm(rf))) / (1 + cnorm_all)
        rel_gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        trace.append(
            dict(iter=it, pobj=pobj * sc.bscale * sc.cscale, dobj=dobj * sc.bscale * sc.cscale,
                 gap=abs(pobj - dobj) * sc.bscale * sc.cscale, xs=xs * sc.bscale * sc.cscale,
                 rel_p=rel_p, rel_d=rel_d, rel_gap=rel_gap)
        )
        if settings.verbosity:
            log.info("it %3d pobj %+.8e dobj %+.8e relp %.1e reld %.1e gap %.1e", it, pobj, dobj, rel_p, rel_d, rel_gap)

        if not all(np.all(np.isfinite(v)) for v in (*X, *S, y, w)):
            status, message = SdpStatus.NUMERICAL_FAILURE, "non-finite iterate"
            break
        if rel_p <= tol and rel_d <= tol and rel_gap <= tol and _meets_invariants(problem, sc, X, y, w, S):
            status = SdpStatus.OPTIMAL
            break
        recent = (recent + [(it, X, y, w, S)])[-4:]
        cert = _infeasibility_certificate(sc, y, S, tol)
        if cert is not None:
            status, certificate = SdpStatus.INFEASIBLE, cert
            break
        if _unbounded_ray(P, X, w, pobj, tol):
            status = SdpStatus.UNBOUNDED
            break
        if it == settings.max_iter:
            break

        # NT scaling per block
        Gs, Ds = [], []
        for x, s in zip(X, S):
            L = _chol(x)
            R = _chol(s)
            _, d, Vt = np.linalg.svd(R.T @ L)
            d = np.maximum(d, 1e-300)
            Gs.append((L @ Vt.T) / np.sqrt(d))
            Ds.append(d)

        At = _scaled_constraints(stacks, Gs, m)
        try:
            kkt = _ReducedSchur(At, free)
        except _IllConditioned as exc:
            status, message = SdpStatus.NUMERICAL_FAILURE, str(exc)
            break
        # near-degenerate optima make the system ill-conditioned as mu -> 0;
        # refinement below judges the solve by its residual instead
        cond_est = kkt.condition
        ill = cond_est > settings.max_condition
        # dual residual in NT-scaled coordinates
        Rd_t = [G.T @ rd @ G for G, rd in zip(Gs, Rd)]

        def unpack(u):
            out, k = [], 0
            for d in Ds:
                n = len(d)
                out.append(u[k:k + n * n].reshape(n, n))
                k += n * n
            return out

        def newton(T):
            """Directions for the scaled complementarity target T (dX~ + dS~ = T)."""
            rt = np.concatenate([(t - r).ravel() for t, r in zip(T, Rd_t)]) if T else np.zeros(0)
            u, dy, dw = kkt.solve(rt, Rp, rf)
            scale = 1.0 + float(np.linalg.norm(Rp)) + float(np.linalg.norm(rf))
            best = None
            for _ in range(settings.refine_steps + 1):
                dX = [_sym(G @ ub @ G.T) for G, ub in zip(Gs, unpack(u))]
                r1 = Rp - P.apply_A(dX) - P.F @ dw
                r2 = rf - P.F.T @ dy
                res = (float(np.linalg.norm(r1)) + float(np.linalg.norm(r2))) / scale
                if best is None or res < best[0]:
                    best = (res, u, dy, dw, dX)
                if res <= 1e-14:
                    break
                cu, cy, cw = kkt.solve(np.zeros_like(u), r1, r2)
                u, dy, dw = u + cu, dy + cy, dw + cw
            res, u, dy, dw, dX = best
            newton_res[0] = res
            if ill and res > settings.newton_residual_limit:
                raise _IllConditioned(f"Newton system condition estimate {cond_est:.2e} exceeds limit "
                                      f"(relative residual {res:.1e} after refinement)")
            aty = P.apply_AT(dy)
            dS = [_sym(rd - a) for rd, a in zip(Rd, aty)]
            ut = [_sym(ub) for ub in unpack(u)]
            st = [_sym(G.T @ ds @ G) for G, ds in zip(Gs, dS)]
            return dX, dy, dw, dS, ut, st

        def steps(ut, st, frac):
            # X = G D G^T and S = G^-T D G^-1, so both tests reduce to D + a*V
            ap = min((_max_step_diag(d, v) for d, v in zip(Ds, ut)), default=math.inf)
            ad = min((_max_step_diag(d, v) for d, v in zip(Ds, st)), default=math.inf)
            return min(1.0, frac * ap), min(1.0, frac * ad)

        # predictor: target zero complementarity
        try:
            dXa, dya, dwa, dSa, uta, sta = newton([-np.diag(d) for d in Ds])
        except _IllConditioned as exc:
            status, message = SdpStatus.NUMERICAL_FAILURE, str(exc)
            break
        ap, ad = steps(uta, sta, 1.0)
        xs_aff = sum(float(np.sum((x + ap * dx) * (s + ad * ds))) for x, dx, s, ds in zip(X, dXa, S, dSa))
        sigma = min(1.0, max(0.0, xs_aff / max(xs, 1e-300))) ** 3
        # corrector with second-order term
        T = []
        for d, dxt, dst in zip(Ds, uta, sta):
            cross = dxt @ dst
            rhs = 2 * sigma * mu * np.eye(len(d)) - 2 * np.diag(d * d) - (cross + cross.T)
            T.append(rhs / (d[:, None] + d[None, :]))
        try:
            dX, dy, dw, dS, ut, st = newton(T)
        except _IllConditioned as exc:
            status, message = SdpStatus.NUMERICAL_FAILURE, str(exc)
            break
        frac = settings.step_fraction if it > 3 else 0.9
        ap, ad = steps(ut, st, frac)
        trace[-1].update(step_p=ap, step_d=ad, sigma=sigma, newton_res=newton_res[0], condition=cond_est)
        X = [_sym(x + ap * dx) for x, dx in zip(X, dX)]
        w = w + ap * dw
        y = y + ad * dy
        S = [_sym(s + ad * ds) for s, ds in zip(S, dS)]

    Xo, yo, wo, So = sc.unscale(X, y, w, S)
    sol = SdpSolution(
        X=Xo, y=yo, w=wo, S=So, status=status,
        primal_obj=problem.objective(Xo, wo), dual_obj=float(problem.b @ yo),
        residuals=Residuals(math.nan, math.nan, math.nan), iterations=it,
        trace=trace, certificate=certificate, message=message,
    )
    sol.residuals = residuals(problem, sol)
    if status in (SdpStatus.NUMERICAL_FAILURE, SdpStatus.MAX_ITER):
        alt = _recover(problem, sc, recent, trace, it, message or status.value)
        if alt is not None:
            return alt
    if status == SdpStatus.OPTIMAL and not _optimal_invariants(sol):
        # scaled criteria met but absolute ones not; report honestly
        sol.status = SdpStatus.NUMERICAL_FAILURE
        sol.message = "converged in scaled units but absolute residuals exceed 1e-7"
    return sol


def _meets_invariants(problem, sc, X, y, w, S) -> bool:
    """Scaled criteria can hold while absolute ones do not; check both."""
    Xo, yo, wo, So = sc.unscale(X, y, w, S)
    sol = SdpSolution(X=Xo, y=yo, w=wo, S=So, status=SdpStatus.OPTIMAL,
                      primal_obj=problem.objective(Xo, wo), dual_obj=float(problem.b @ yo),
                      residuals=Residuals(math.nan, math.nan, math.nan), iterations=0)
    sol.residuals = residuals(problem, sol)
    return _optimal_invariants(sol)


def _recover(problem, sc, recent, trace, it, why) -> SdpSolution | None:
    """Newest of the last few iterates that meets the invariants after polishing.

    Near a degenerate optimum the Newton system loses accuracy before the gap
    closes, and the final steps mostly add primal drift.
    """
    for k, X, y, w, S in reversed(recent):
        Xo, yo, wo, So = sc.unscale(X, y, w, S)
        try:
            pol = _polish(problem, Xo, wo)
        except np.linalg.LinAlgError:
            pol = None
        for Xc, wc in ((Xo, wo), pol) if pol else ((Xo, wo),):
            alt = SdpSolution(
                X=Xc, y=yo, w=wc, S=So, status=SdpStatus.OPTIMAL,
                primal_obj=problem.objective(Xc, wc), dual_obj=float(problem.b @ yo),
                residuals=Residuals(math.nan, math.nan, math.nan), iterations=it,
                trace=trace, certificate=None, message=f"recovered iterate {k} after: {why}",
            )
            alt.residuals = residuals(problem, alt)
            if _optimal_invariants(alt) and alt.residuals.dual <= 1e-7:
                return alt
    return None


def _optimal_invariants(sol: SdpSolution) -> bool:
    r = sol.residuals
    lam_ok = all(np.linalg.eigvalsh(x)[0] >= -1e-7 for x in sol.X)
    return lam_ok and r.primal <= 1e-7 and r.gap <= 1e-7 * (1 + abs(sol.primal_obj))


def _infeasibility_certificate(sc: _Scaled, y, S, tol) -> np.ndarray | None:
    """Dual improving ray: sum y_k A_k NSD, F^T y = 0, b.y > 0 (original units)."""
    P = sc.problem
    by = float(P.b @ y)
    if by <= 0:
        return None
    if by < 1.0 / tol ** 0.5:
        return None
    # candidate in original units, normalised so that b.y = 1
    yo = y / sc.row
    yo = yo / float(sc.p.b @ yo)
    aty = sc.p.apply_AT(yo)
    lam = max((float(np.linalg.eigvalsh(a)[-1]) for a in aty), default=0.0)
    viol = max(lam, 0.0)
    if sc.p.num_free:
        viol = max(viol, float(np.max(np.abs(sc.p.F.T @ yo))))
    if viol <= 1e2 * tol:
        return yo
    return None


def _unbounded_ray(P: SdpProblem, X, w, pobj, tol) -> bool:
    if pobj >= 0:
        return False
    scale = -pobj
    if scale < 1.0 / tol ** 0.5:
        return False
    res = P.apply_A([x / scale for x in X]) + P.F @ (w / scale)
    return float(np.max(np.abs(res), initial=0.0)) <= 1e2 * tol
