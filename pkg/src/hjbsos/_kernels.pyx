# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics match hjbsos._kernels_py line for line."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN

cnp.import_array()

cdef enum:
    EXIT_ORIGIN = 0
    EXIT_BOUNDARY = 1
    EXIT_TIMEOUT = 2
    EXIT_GUARD = 3


cdef inline double _ipow(double x, long e) nogil:
    cdef double r = 1.0
    while e > 0:
        if e & 1:
            r *= x
        x *= x
        e >>= 1
    return r


cdef void _eval(const long[:, :] exps, const double[:] coefs, const long[:] owner,
                const double[:] x, double[:] out) nogil:
    cdef Py_ssize_t t, i, T = coefs.shape[0], n = x.shape[0]
    cdef double term
    cdef long e
    for i in range(out.shape[0]):
        out[i] = 0.0
    for t in range(T):
        term = coefs[t]
        for i in range(n):
            e = exps[t, i]
            if e:
                term *= _ipow(x[i], e)
        out[owner[t]] += term


def eval_packed(const long[:, :] exps, const double[:] coefs, const long[:] owner, long npoly, x):
    cdef double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros(npoly)
    cdef double[:] ov = out
    _eval(exps, coefs, owner, xv, ov)
    return out


def eval_packed_many(const long[:, :] exps, const double[:] coefs, const long[:] owner, long npoly, X):
    cdef double[:, :] Xv = np.ascontiguousarray(X, dtype=np.float64)
    out = np.zeros((Xv.shape[0], npoly))
    cdef double[:, :] ov = out
    cdef Py_ssize_t r
    with nogil:
        for r in range(Xv.shape[0]):
            _eval(exps, coefs, owner, Xv[r], ov[r])
    return out


def rollout(const long[:, :] exps, const double[:] coefs, const long[:] owner, long npoly,
            layout, const long[:] leaf_ngen, x0, double dt, const double[:, :] noise,
            const double[:, :] R, const double[:, :] Rinv, double lam, double origin_ball,
            double guard, double[:, :] states, double[:, :] controls, double[:] costs):
    cdef long n = layout[0], m = layout[1], l = layout[2], nleaves = layout[3], nexit = layout[4]
    cdef long max_steps = noise.shape[0]
    cdef double sdt = sqrt(dt)
    cdef long o_G = n, o_B = n + n * m, o_q = n + n * m + n * l
    cdef long o_leaf = o_q + 1, o_gen = o_leaf + nleaves * (1 + n)
    cdef long o_exit = o_gen
    cdef long i, j, a, b, k = 0, leaf, g0, ng, base
    cdef bint ok
    cdef int return_code = -1
    cdef double psi, cost = 0.0, acc, quad, nrm, dd, xd, s, bz
    for j in range(nleaves):
        o_exit += leaf_ngen[j]
    x_arr = np.array(x0, dtype=np.float64)
    v_arr = np.zeros(npoly)
    u_arr = np.zeros(m)
    w_arr = np.zeros(m)
    dx_arr = np.zeros(n)
    cdef double[:] x = x_arr
    cdef double[:] v = v_arr
    cdef double[:] u = u_arr
    cdef double[:] w = w_arr
    cdef double[:] dx = dx_arr
    with nogil:
        while True:
            _eval(exps, coefs, owner, x, v)
            for i in range(nexit):
                if v[o_exit + i] < 0.0:
                    return_code = EXIT_BOUNDARY
                    break
            if return_code == EXIT_BOUNDARY:
                break
            leaf = nleaves - 1
            g0 = o_gen
            for j in range(nleaves):
                ng = leaf_ngen[j]
                ok = True
                for i in range(ng):
                    if v[g0 + i] < -1e-12:
                        ok = False
                        break
                if ok:
                    leaf = j
                    break
                g0 += ng
            base = o_leaf + leaf * (1 + n)
            psi = v[base]
            for i in range(n):
                states[k, i] = x[i]
            costs[k] = cost
            if not psi > guard:
                for a in range(m):
                    controls[k, a] = NAN
                k += 1
                return_code = EXIT_GUARD
                break
            # w = G^T grad, u = (lam / psi) Rinv w
            for a in range(m):
                acc = 0.0
                for i in range(n):
                    acc += v[o_G + i * m + a] * v[base + 1 + i]
                w[a] = acc
            for a in range(m):
                acc = 0.0
                for b in range(m):
                    acc += Rinv[a, b] * w[b]
                u[a] = (lam / psi) * acc
                controls[k, a] = u[a]
            nrm = 0.0
            for i in range(n):
                nrm += x[i] * x[i]
            if sqrt(nrm) <= origin_ball:
                k += 1
                return_code = EXIT_ORIGIN
                break
            if k == max_steps:
                k += 1
                return_code = EXIT_TIMEOUT
                break
            quad = 0.0
            for a in range(m):
                for b in range(m):
                    quad += u[a] * R[a, b] * u[b]
            cost += (v[o_q] + 0.5 * quad) * dt
            dd = 0.0
            xd = 0.0
            for i in range(n):
                acc = v[i]
                for a in range(m):
                    acc += v[o_G + i * m + a] * u[a]
                acc *= dt
                bz = 0.0
                for j in range(l):
                    bz += v[o_B + i * l + j] * noise[k, j]
                acc += bz * sdt
                dx[i] = acc
                dd += acc * acc
                xd += x[i] * acc
            # the interpolated path may cross the origin ball between samples
            s = 0.0
            if dd > 0.0:
                s = -xd / dd
                if s < 0.0:
                    s = 0.0
                elif s > 1.0:
                    s = 1.0
            nrm = 0.0
            for i in range(n):
                nrm += (x[i] + s * dx[i]) * (x[i] + s * dx[i])
            if sqrt(nrm) <= origin_ball:
                for i in range(n):
                    x[i] += s * dx[i]
            else:
                for i in range(n):
                    x[i] += dx[i]
            k += 1
    return k, return_code
