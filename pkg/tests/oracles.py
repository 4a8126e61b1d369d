"""Reference computations that do not go through the package code paths."""

import numpy as np
import sympy as sp

from hjbsos.sdp import SdpProblem


def to_sympy(p, symbols):
    """Rebuild a package polynomial as a sympy expression from its terms."""
    expr = 0
    for m, c in p.items():
        term = sp.Float(c, 17)
        for s, e in zip(symbols, m):
            term *= s**e
        expr += term
    return sp.expand(expr)


def sympy_coeffs(expr, symbols):
    poly = sp.Poly(sp.expand(expr), *symbols)
    return {tuple(int(e) for e in m): float(c) for m, c in poly.terms() if float(c) != 0.0}


def central_gradient(fn, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def central_hessian(fn, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    n = len(x)
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            H[i, j] = (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)) / (4 * h * h)
    return H


def random_psd(rng, n, rank):
    V = rng.standard_normal((n, rank))
    return V @ V.T


def dual_certificate_instance(rng, dims, m):
    """SDP with a known optimum built from complementary X*, S* and a dual y*.

    X* and S* share an orthonormal eigenbasis with complementary supports,
    so X* S* = 0 and both are optimal; b = A(X*), C = A^T y* + S*.
    """
    Xs, Ss = [], []
    for n in dims:
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        r = int(rng.integers(1, n)) if n > 1 else int(rng.integers(0, 2))
        dx = np.concatenate([rng.uniform(0.5, 2.0, r), np.zeros(n - r)])
        ds = np.concatenate([np.zeros(r), rng.uniform(0.5, 2.0, n - r)])
        Xs.append((Q * dx) @ Q.T)
        Ss.append((Q * ds) @ Q.T)
    cons = []
    for _ in range(m):
        blocks = []
        for n in dims:
            a = rng.standard_normal((n, n))
            blocks.append(0.5 * (a + a.T))
        cons.append(blocks)
    y = rng.standard_normal(m)
    b = np.array([sum(float(np.sum(a * x)) for a, x in zip(blocks, Xs)) for blocks in cons])
    C = [sum(y[k] * cons[k][i] for k in range(m)) + Ss[i] for i in range(len(dims))]
    C = [0.5 * (c + c.T) for c in C]
    opt = sum(float(np.sum(c * x)) for c, x in zip(C, Xs))
    return SdpProblem.from_dense(dims, cons, b, C), opt, float(b @ y)


def five_point_gradient(fn, x, h=1e-3):
    """Fourth-order central differences; less sensitive to round-off than a tiny h."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)
    return g


def richardson_hessian(fn, x, h=1e-3):
    """Central-difference Hessian extrapolated from steps h and h/2 (fourth order)."""
    coarse = central_hessian(fn, x, h)
    fine = central_hessian(fn, x, h / 2)
    return (4 * fine - coarse) / 3
