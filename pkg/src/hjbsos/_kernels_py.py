"""Reference implementations of the compiled kernels.

Polynomials are packed into one term table: row t contributes
coefs[t] * prod_i x_i ** exps[t, i] to polynomial owner[t].
"""

from __future__ import annotations

import math

import numpy as np

EXIT_ORIGIN = 0
EXIT_BOUNDARY = 1
EXIT_TIMEOUT = 2
EXIT_GUARD = 3


def eval_packed(exps, coefs, owner, npoly, x):
    out = np.zeros(npoly)
    for t in range(len(coefs)):
        term = coefs[t]
        for i in range(len(x)):
            e = exps[t, i]
            if e:
                term *= x[i] ** e
        out[owner[t]] += term
    return out


def eval_packed_many(exps, coefs, owner, npoly, X):
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros((X.shape[0], npoly))
    if len(coefs) == 0:
        return out
    mono = np.ones((X.shape[0], len(coefs)))
    for i in range(X.shape[1]):
        mono *= X[:, i:i + 1] ** exps[:, i]
    np.add.at(out.T, owner, (mono * coefs).T)
    return out


def rollout(exps, coefs, owner, npoly, layout, leaf_ngen, x0, dt, noise, R, Rinv,
            lam, origin_ball, guard, states, controls, costs):
    """Closed-loop Euler-Maruyama rollout; returns (recorded states, exit code).

    ``layout`` is (n, m, l, nleaves, n_exit_gen).  The packed polynomials are,
    in order: f (n), G (n*m, row major), B (n*l), q, then per leaf Psi_l and
    its gradient (1 + n), then the leaf generators, then the exit generators.
    ``noise`` holds one already-correlated N(0, Sigma_eps) draw per step.
    A step whose segment passes through the origin ball ends at the point of
    the segment closest to the origin.
    """
    n, m, l, nleaves, nexit = (int(v) for v in layout)
    max_steps = noise.shape[0]
    sdt = math.sqrt(dt)
    x = np.array(x0, dtype=np.float64)
    o_G = n
    o_B = o_G + n * m
    o_q = o_B + n * l
    o_leaf = o_q + 1
    o_gen = o_leaf + nleaves * (1 + n)
    o_exit = o_gen + int(np.sum(leaf_ngen))
    cost = 0.0
    k = 0
    while True:
        v = eval_packed(exps, coefs, owner, npoly, x)
        if nexit and np.min(v[o_exit:o_exit + nexit]) < 0.0:
            return k, EXIT_BOUNDARY
        leaf = nleaves - 1
        g0 = o_gen
        for j in range(nleaves):
            ng = int(leaf_ngen[j])
            if ng == 0 or np.min(v[g0:g0 + ng]) >= -1e-12:
                leaf = j
                break
            g0 += ng
        base = o_leaf + leaf * (1 + n)
        psi = v[base]
        states[k] = x
        costs[k] = cost
        if not psi > guard:
            controls[k] = np.nan
            return k + 1, EXIT_GUARD
        grad = v[base + 1:base + 1 + n]
        G = v[o_G:o_G + n * m].reshape(n, m)
        u = (lam / psi) * (Rinv @ (G.T @ grad))
        controls[k] = u
        if math.sqrt(float(x @ x)) <= origin_ball:
            return k + 1, EXIT_ORIGIN
        if k == max_steps:
            return k + 1, EXIT_TIMEOUT
        cost += (v[o_q] + 0.5 * float(u @ R @ u)) * dt
        B = v[o_B:o_B + n * l].reshape(n, l)
        dx = (v[:n] + G @ u) * dt + (B @ noise[k]) * sdt
        # the interpolated path may cross the origin ball between samples
        dd = float(dx @ dx)
        s = min(1.0, max(0.0, -float(x @ dx) / dd)) if dd > 0.0 else 0.0
        p = x + s * dx
        x = p if math.sqrt(float(p @ p)) <= origin_ball else x + dx
        k += 1
