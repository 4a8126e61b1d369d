"""Sparse multivariate polynomials with float coefficients.

A :class:`Polynomial` maps exponent tuples to coefficients.  Values are
immutable; every operation returns a new polynomial in canonical form
(coefficients with magnitude below ``DROP_TOL`` are discarded).

Monomials are ordered graded-lexicographically: first by total degree, then
by the exponent tuple with the first variable most significant, so the
degree <= 2 basis in (x, y) reads ``1, x, y, x^2, x*y, y^2``.
"""

from __future__ import annotations

import itertools
import math
import re
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

DROP_TOL = 1e-14

Monomial = tuple[int, ...]


class PolynomialError(ValueError):
    pass


class ParseError(PolynomialError):
    pass


def monomial_key(m: Monomial) -> tuple:
    return (sum(m), tuple(-a for a in m))


def monomials_up_to(nvars: int, degree: int) -> list[Monomial]:
    """All exponent tuples of total degree <= ``degree`` in graded-lex order."""
    if degree < 0:
        return []
    out = []
    for d in range(degree + 1):
        out.extend(_monomials_of_degree(nvars, d))
    return out


def _monomials_of_degree(nvars: int, d: int) -> list[Monomial]:
    if nvars == 1:
        return [(d,)]
    out = []
    for a in range(d, -1, -1):
        for rest in _monomials_of_degree(nvars - 1, d - a):
            out.append((a,) + rest)
    return out


def default_names(nvars: int) -> list[str]:
    return ["x"] if nvars == 1 else [f"x{i + 1}" for i in range(nvars)]


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` variables."""

    __slots__ = ("nvars", "_terms", "__dict__")

    def __init__(self, terms: Mapping[Monomial, float] | None = None, nvars: int = 1):
        if nvars < 1:
            raise PolynomialError("nvars must be positive")
        clean = {}
        for m, c in (terms or {}).items():
            m = tuple(int(a) for a in m)
            if len(m) != nvars or any(a < 0 for a in m):
                raise PolynomialError(f"bad monomial {m} for {nvars} variables")
            c = float(c)
            if abs(c) >= DROP_TOL:
                clean[m] = c
        self.nvars = nvars
        self._terms = dict(sorted(clean.items(), key=lambda kv: monomial_key(kv[0])))

    # construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, c: float, nvars: int = 1) -> "Polynomial":
        return cls({(0,) * nvars: c}, nvars)

    @classmethod
    def zero(cls, nvars: int = 1) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def variable(cls, index: int, nvars: int) -> "Polynomial":
        if not 0 <= index < nvars:
            raise PolynomialError(f"variable index {index} out of range")
        m = [0] * nvars
        m[index] = 1
        return cls({tuple(m): 1.0}, nvars)

    @classmethod
    def monomial(cls, exps: Sequence[int], coef: float = 1.0) -> "Polynomial":
        return cls({tuple(exps): coef}, len(exps))

    @classmethod
    def from_basis(cls, coeffs: Sequence[float], nvars: int, max_degree: int) -> "Polynomial":
        basis = monomials_up_to(nvars, max_degree)
        if len(coeffs) != len(basis):
            raise PolynomialError("coefficient vector does not match basis size")
        return cls(dict(zip(basis, coeffs)), nvars)

    @classmethod
    def parse(cls, text: str, names: Sequence[str] | None = None) -> "Polynomial":
        return _Parser(text, names).parse()

    # basic properties -----------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, m: Monomial) -> float:
        return self._terms.get(tuple(m), 0.0)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def degree_in(self, var: int) -> int:
        return max((m[var] for m in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(m) == 0 for m in self._terms)

    def constant_term(self) -> float:
        return self._terms.get((0,) * self.nvars, 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    # arithmetic -----------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise PolynomialError(
                    f"variable count mismatch: {self.nvars} vs {other.nvars}"
                )
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self._terms.items()}, self.nvars)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial({m: c * other for m, c in self._terms.items()}, self.nvars)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(out, self.nvars)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float, np.floating, np.integer)):
            return NotImplemented
        return self * (1.0 / other)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise PolynomialError("only nonnegative integer powers are supported")
        out = Polynomial.constant(1.0, self.nvars)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.nvars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, tuple(self._terms.items())))

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= tol for c in diff._terms.values())

    # calculus -------------------------------------------------------------
    def differentiate(self, var: int) -> "Polynomial":
        if not 0 <= var < self.nvars:
            raise PolynomialError(f"variable index {var} out of range")
        out = {}
        for m, c in self._terms.items():
            if m[var]:
                mm = list(m)
                mm[var] -= 1
                out[tuple(mm)] = c * m[var]
        return Polynomial(out, self.nvars)

    def gradient(self) -> "PolyMatrix":
        return PolyMatrix([[self.differentiate(i)] for i in range(self.nvars)])

    def hessian(self) -> "PolyMatrix":
        grad = [self.differentiate(i) for i in range(self.nvars)]
        rows = []
        for i in range(self.nvars):
            row = []
            for j in range(self.nvars):
                # d/dx_j d/dx_i, reused for the transposed entry so H is exactly symmetric
                row.append(grad[i].differentiate(j) if j >= i else rows[j][i])
            rows.append(row)
        return PolyMatrix(rows)

    def substitute(self, var: int, value: float) -> "Polynomial":
        """Fix one variable to a number; the variable count is unchanged."""
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            mm = list(m)
            k = mm[var]
            mm[var] = 0
            mm = tuple(mm)
            out[mm] = out.get(mm, 0.0) + c * value**k
        return Polynomial(out, self.nvars)

    # evaluation -----------------------------------------------------------
    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(exponents int64 (T, n), coefficients float64 (T,)) in canonical order."""
        if not self._terms:
            return np.zeros((0, self.nvars), dtype=np.int64), np.zeros(0)
        exps = np.array(list(self._terms.keys()), dtype=np.int64)
        coefs = np.array(list(self._terms.values()), dtype=np.float64)
        return exps, coefs

    def evaluate(self, point) -> float | np.ndarray:
        """Evaluate at one point (shape (n,)) or a batch (shape (N, n)).

        For univariate polynomials a 1-D array of length > 1 is read as a batch.
        """
        pts = np.asarray(point, dtype=np.float64)
        if self.nvars == 1 and pts.ndim == 1 and pts.size > 1:
            pts = pts.reshape(-1, 1)
        single = pts.ndim <= 1
        if single:
            pts = pts.reshape(1, -1)
        if pts.shape[-1] != self.nvars:
            raise PolynomialError(
                f"point has dimension {pts.shape[-1]}, polynomial has {self.nvars}"
            )
        exps, coefs = self.arrays
        if len(coefs) == 0:
            vals = np.zeros(pts.shape[0])
        else:
            maxdeg = int(exps.max()) if exps.size else 0
            # powers[k][N, n] = pts**k, built by repeated multiplication
            powers = np.empty((maxdeg + 1,) + pts.shape)
            powers[0] = 1.0
            for k in range(1, maxdeg + 1):
                powers[k] = powers[k - 1] * pts
            mono = np.ones((pts.shape[0], len(coefs)))
            for v in range(self.nvars):
                mono *= powers[exps[:, v], :, v].T
            vals = mono @ coefs
        return float(vals[0]) if single else vals

    def __call__(self, *args):
        if len(args) == 1:
            return self.evaluate(args[0])
        return self.evaluate(np.array(args, dtype=float))

    def coefficients_in_basis(self, max_degree: int) -> np.ndarray:
        if self.degree > max_degree:
            raise PolynomialError(
                f"degree {self.degree} exceeds basis degree {max_degree}"
            )
        basis = monomials_up_to(self.nvars, max_degree)
        return np.array([self._terms.get(m, 0.0) for m in basis])

    # text -----------------------------------------------------------------
    def to_string(self, names: Sequence[str] | None = None) -> str:
        names = list(names) if names is not None else default_names(self.nvars)
        if len(names) != self.nvars:
            raise PolynomialError("wrong number of variable names")
        if not self._terms:
            return "0"
        parts = []
        for m, c in reversed(list(self._terms.items())):
            factors = []
            for name, a in zip(names, m):
                if a == 1:
                    factors.append(name)
                elif a > 1:
                    factors.append(f"{name}^{a}")
            body = " * ".join([repr(abs(c))] + factors)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            out += f" {sign} {body}"
        return out

    def __str__(self):
        return self.to_string()

    def __repr__(self):
        return f"Polynomial({self.to_string()!r}, nvars={self.nvars})"


class PolyMatrix:
    """Dense matrix of polynomials sharing one variable count."""

    def __init__(self, entries: Sequence[Sequence[Polynomial]]):
        rows = [tuple(r) for r in entries]
        if not rows or not rows[0]:
            raise PolynomialError("PolyMatrix needs at least one entry")
        ncols = len(rows[0])
        nvars = rows[0][0].nvars
        for r in rows:
            if len(r) != ncols:
                raise PolynomialError("ragged PolyMatrix")
            for p in r:
                if p.nvars != nvars:
                    raise PolynomialError("PolyMatrix entries disagree on nvars")
        self.entries = tuple(rows)
        self.nvars = nvars

    @classmethod
    def from_array(cls, arr, nvars: int) -> "PolyMatrix":
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return cls([[Polynomial.constant(v, nvars) for v in row] for row in arr])

    @classmethod
    def column(cls, polys: Sequence[Polynomial]) -> "PolyMatrix":
        return cls([[p] for p in polys])

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.entries), len(self.entries[0])

    def __getitem__(self, idx):
        i, j = idx
        return self.entries[i][j]

    @property
    def T(self) -> "PolyMatrix":
        r, c = self.shape
        return PolyMatrix([[self.entries[i][j] for i in range(r)] for j in range(c)])

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.shape != other.shape:
            raise PolynomialError("shape mismatch")
        return PolyMatrix(
            [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)]
        )

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + other.scale(-1.0)

    def scale(self, s) -> "PolyMatrix":
        return PolyMatrix([[p * s for p in row] for row in self.entries])

    def __matmul__(self, other) -> "PolyMatrix":
        if not isinstance(other, PolyMatrix):
            other = PolyMatrix.from_array(other, self.nvars)
        r, k = self.shape
        k2, c = other.shape
        if k != k2:
            raise PolynomialError(f"cannot multiply {self.shape} by {other.shape}")
        out = []
        for i in range(r):
            row = []
            for j in range(c):
                acc = Polynomial.zero(self.nvars)
                for t in range(k):
                    acc = acc + self.entries[i][t] * other.entries[t][j]
                row.append(acc)
            out.append(row)
        return PolyMatrix(out)

    def __rmatmul__(self, other) -> "PolyMatrix":
        return PolyMatrix.from_array(other, self.nvars) @ self

    def evaluate(self, point) -> np.ndarray:
        return np.array([[p.evaluate(point) for p in row] for row in self.entries])

    def is_symmetric(self) -> bool:
        r, c = self.shape
        return r == c and all(
            self.entries[i][j] == self.entries[j][i] for i in range(r) for j in range(i)
        )

    def __eq__(self, other):
        return isinstance(other, PolyMatrix) and self.entries == other.entries

    def __iter__(self):
        return iter(self.entries)

    def __repr__(self):
        return "PolyMatrix(" + repr([[str(p) for p in r] for r in self.entries]) + ")"


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


class _Parser:
    """Recursive-descent parser for sums/products/powers of named variables."""

    def __init__(self, text: str, names: Sequence[str] | None):
        self.text = text
        self.tokens = self._tokenize(text)
        self.pos = 0
        self.names = list(names) if names is not None else None

    def _tokenize(self, text):
        tokens = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise ParseError(f"unexpected character {text[pos:pos + 1]!r} at {pos} in {text!r}")
            kind = m.lastgroup
            tokens.append((kind, m.group(kind)))
            pos = m.end()
        return tokens

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def _next(self):
        tok = self._peek()
        self.pos += 1
        return tok

    def parse(self) -> Polynomial:
        if self.names is None:
            found = sorted({v for k, v in self.tokens if k == "name"})
            self.names = found or ["x"]
        self.nvars = len(self.names)
        if not self.tokens:
            raise ParseError(f"empty polynomial string {self.text!r}")
        p = self._expr()
        if self.pos != len(self.tokens):
            raise ParseError(f"trailing input {self._peek()[1]!r} in {self.text!r}")
        return p

    def _expr(self):
        p = self._term()
        while self._peek() in (("op", "+"), ("op", "-")):
            op = self._next()[1]
            q = self._term()
            p = p + q if op == "+" else p - q
        return p

    def _term(self):
        p = self._unary()
        while self._peek() in (("op", "*"), ("op", "/")):
            op = self._next()[1]
            q = self._unary()
            if op == "*":
                p = p * q
            else:
                if not q.is_constant() or q.is_zero():
                    raise ParseError(f"division by non-constant in {self.text!r}")
                p = p / q.constant_term()
        return p

    def _unary(self):
        if self._peek() == ("op", "-"):
            self._next()
            return -self._unary()
        if self._peek() == ("op", "+"):
            self._next()
            return self._unary()
        return self._power()

    def _power(self):
        base = self._atom()
        if self._peek() in (("op", "^"), ("op", "**")):
            self._next()
            kind, val = self._next()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise ParseError(f"exponent must be a nonnegative integer in {self.text!r}")
            return base ** int(val)
        return base

    def _atom(self):
        kind, val = self._next()
        if kind == "num":
            return Polynomial.constant(float(val), self.nvars)
        if kind == "name":
            if val not in self.names:
                raise ParseError(f"unknown variable {val!r} in {self.text!r}")
            return Polynomial.variable(self.names.index(val), self.nvars)
        if (kind, val) == ("op", "("):
            p = self._expr()
            if self._next() != ("op", ")"):
                raise ParseError(f"missing ')' in {self.text!r}")
            return p
        raise ParseError(f"unexpected token {val!r} in {self.text!r}")


def poly_sum(polys: Iterable[Polynomial], nvars: int) -> Polynomial:
    out: dict[Monomial, float] = {}
    for p in polys:
        for m, c in p.items():
            out[m] = out.get(m, 0.0) + c
    return Polynomial(out, nvars)


def random_polynomial(rng: np.random.Generator, nvars: int, degree: int, density: float = 0.6) -> Polynomial:
    basis = monomials_up_to(nvars, degree)
    terms = {m: rng.uniform(-1, 1) for m in basis if rng.random() < density}
    return Polynomial(terms, nvars)
