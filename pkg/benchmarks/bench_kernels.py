"""Compiled vs pure-Python kernels on the unstable scalar problem.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit
from pathlib import Path

import numpy as np

from hjbsos import _kernels_py, kernels
from hjbsos.config import load_config
from hjbsos.control import Controller, ValueFunction
from hjbsos.hjb import solve_degree
from hjbsos.sim import SimConfig, simulate, _Model

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "unstable_scalar.json"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--degree", type=int, default=16)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    from hjbsos import _kernels

    cfg = load_config(CONFIG)
    sol = solve_degree(cfg.problem, args.degree, cfg.solver, cfg.partition_axes)
    ctrl = Controller(ValueFunction.from_solution(sol), cfg.problem)
    model = _Model(cfg.problem, ctrl)
    X = np.linspace(-1, 1, 20001)[:, None]
    sim = SimConfig(num_runs=2)

    cases = {
        "eval_packed_many (20001 points)": lambda impl: model.packed.many(X, impl=impl),
        "eval_packed (1 point x 1000)": lambda impl: [model.packed(X[i], impl=impl) for i in range(1000)],
        "rollout (x0=-0.5, 10 seeds)": lambda impl: [simulate(cfg.problem, ctrl, [-0.5], sim, seed=s, impl=impl)
                                                     for s in range(10)],
    }
    print(f"{'kernel':36s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:36s} {t_py:12.2f} {t_c:14.2f} {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
