"""Kernel selection: the compiled extension when importable, else pure Python.

Set HJBSOS_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("HJBSOS_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"
EXIT_ORIGIN = _kernels_py.EXIT_ORIGIN
EXIT_BOUNDARY = _kernels_py.EXIT_BOUNDARY
EXIT_TIMEOUT = _kernels_py.EXIT_TIMEOUT
EXIT_GUARD = _kernels_py.EXIT_GUARD


class Packed:
    """Several polynomials stored in one term table for joint evaluation."""

    def __init__(self, polys, nvars: int):
        exps, coefs, owner = [], [], []
        for k, p in enumerate(polys):
            e, c = p.arrays
            exps.append(e.reshape(-1, nvars))
            coefs.append(c)
            owner.append(np.full(len(c), k, dtype=np.int64))
        self.nvars = nvars
        self.npoly = len(polys)
        self.exps = np.ascontiguousarray(np.vstack(exps) if exps else np.zeros((0, nvars)), dtype=np.int64)
        self.coefs = np.ascontiguousarray(np.concatenate(coefs) if coefs else np.zeros(0), dtype=np.float64)
        self.owner = np.ascontiguousarray(np.concatenate(owner) if owner else np.zeros(0), dtype=np.int64)

    def __call__(self, x, impl=None) -> np.ndarray:
        impl = impl or _impl
        return impl.eval_packed(self.exps, self.coefs, self.owner, self.npoly, np.asarray(x, dtype=np.float64))

    def many(self, X, impl=None) -> np.ndarray:
        impl = impl or _impl
        return impl.eval_packed_many(self.exps, self.coefs, self.owner, self.npoly,
                                     np.ascontiguousarray(X, dtype=np.float64))


def rollout(packed: Packed, layout, leaf_ngen, x0, dt, noise, R, Rinv, lam, origin_ball, guard, impl=None):
    """Run one closed-loop rollout; returns (states, controls, costs, exit code)."""
    impl = impl or _impl
    n, m = int(layout[0]), int(layout[1])
    steps = noise.shape[0] + 1
    states = np.zeros((steps, n))
    controls = np.zeros((steps, m))
    costs = np.zeros(steps)
    k, code = impl.rollout(
        packed.exps, packed.coefs, packed.owner, packed.npoly,
        np.asarray(layout, dtype=np.int64), np.asarray(leaf_ngen, dtype=np.int64),
        np.asarray(x0, dtype=np.float64), float(dt), np.ascontiguousarray(noise, dtype=np.float64),
        np.ascontiguousarray(R, dtype=np.float64), np.ascontiguousarray(Rinv, dtype=np.float64),
        float(lam), float(origin_ball), float(guard), states, controls, costs,
    )
    return states[:k], controls[:k], costs[:k], int(code)
