"""Command-line front end: solve, simulate, verify, oracle.

Every command writes into its own subdirectory of ``--out``.  The directory
is assembled under a temporary name and renamed into place, and an existing
result is only replaced with ``--force``.  Reports carry the configuration
hash and the package version but no timestamps, so reruns are byte-identical.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .control import (
    Controller,
    NonpositiveDesirability,
    ValueFunction,
    sclf_audit,
    suboptimality_bound,
    value_at,
    value_bounds_check,
)
from .hjb import RelaxationSolution, partition_domain, solve_hierarchy
from .oracle import OracleError, reference_pieces, richardson_change, sup_norm_estimate
from .poly import Polynomial
from .sdp import SdpStatus
from .sim import SimConfig, monte_carlo

log = logging.getLogger("hjbsos")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_SOLVER = 3

POINT_TOL = 1e-4


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# output plumbing


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@contextlib.contextmanager
def _atomic_dir(target: Path, force: bool):
    """Yield a scratch directory that replaces ``target`` on success."""
    target = Path(target)
    if target.exists() and not force:
        raise UsageError(f"{target} already exists; pass --force to replace it")
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.parent / f".{target.name}.old-{os.getpid()}"
        target.rename(old)
    tmp.rename(target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _header(cfg: RunConfig, command: str) -> dict:
    return {"tool": "hjbsos", "version": __version__, "command": command,
            "config_sha256": cfg.sha256, "problem": cfg.problem.label}


def _fmt(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# solutions on disk


def _terms(p: Polynomial) -> list:
    return [[list(m), c] for m, c in sorted(p.items(), key=lambda t: (sum(t[0]), t[0]))]


def _from_terms(terms, nvars: int) -> Polynomial:
    return Polynomial({tuple(int(e) for e in m): float(c) for m, c in terms}, nvars)


def _diagnostics(d: dict) -> dict:
    # wall-clock time is left out so that reports are reproducible
    return {k: v for k, v in sorted(d.items()) if k != "seconds"}


def solution_to_dict(sol: RelaxationSolution) -> dict:
    pieces = []
    for leaf in sol.leaves():
        pieces.append({
            "label": leaf.problem.label,
            "status": leaf.status,
            "epsilon": leaf.epsilon,
            "psi_l": _terms(leaf.psi_l) if leaf.psi_l is not None else None,
            "psi_u": _terms(leaf.psi_u) if leaf.psi_u is not None else None,
            "diagnostics": _diagnostics(leaf.diagnostics),
        })
    return {"degree": sol.degree, "status": sol.status, "feasible": sol.feasible,
            "epsilon": sol.epsilon, "pieces": pieces}


def _pieces_of(cfg: RunConfig):
    pieces = [cfg.problem]
    for axis in cfg.partition_axes:
        pieces = [sub for piece in pieces for sub in partition_domain(piece, axis)]
    return pieces


def solution_from_dict(cfg: RunConfig, data: dict) -> RelaxationSolution:
    n = cfg.problem.nvars
    probs = _pieces_of(cfg)
    if len(probs) != len(data["pieces"]):
        raise UsageError("stored solution does not match the configured partition")
    leaves = []
    for prob, item in zip(probs, data["pieces"]):
        psi_l = _from_terms(item["psi_l"], n) if item["psi_l"] is not None else None
        psi_u = _from_terms(item["psi_u"], n) if item["psi_u"] is not None else None
        leaves.append(RelaxationSolution(data["degree"], item["status"], item["epsilon"], psi_l, psi_u, prob,
                                         dict(item.get("diagnostics", {}))))
    if len(leaves) == 1:
        return leaves[0]
    return RelaxationSolution(data["degree"], data["status"], data["epsilon"], None, None, cfg.problem, {}, leaves)


def _load_solutions(cfg: RunConfig, out: Path) -> dict[int, RelaxationSolution]:
    path = out / "solve" / "report.json"
    if not path.exists():
        raise UsageError(f"missing solve artifacts: {path} (run `hjbsos solve` first)")
    report = json.loads(path.read_text())
    if report.get("config_sha256") != cfg.sha256:
        raise UsageError(f"{path} was produced from a different configuration")
    return {d["degree"]: solution_from_dict(cfg, d) for d in report["degrees"]}


def sample_grid(cfg: RunConfig) -> np.ndarray:
    return cfg.problem.domain.grid(cfg.grid_points)


def audit_grid(cfg: RunConfig) -> np.ndarray:
    """Points of the domain at distance >= audit_exclusion from the origin."""
    p = cfg.problem
    if p.nvars == 1:
        lo, hi = p.domain.box[0]
        half = cfg.audit_points // 2
        pts = np.concatenate([np.linspace(lo, -cfg.audit_exclusion, half),
                              np.linspace(cfg.audit_exclusion, hi, cfg.audit_points - half)])[:, None]
        return pts[p.domain.contains(pts, tol=1e-12)]
    pts = p.domain.sample(cfg.audit_points * 2, np.random.default_rng(0))
    return pts[np.linalg.norm(pts, axis=1) >= cfg.audit_exclusion][: cfg.audit_points]


# --------------------------------------------------------------------------
# checks shared by `verify` and the test-suite


def oracle_checks(cfg: RunConfig, sol: RelaxationSolution, grids=None) -> list[dict]:
    """Sandwich and pointwise error of each piece against the FD oracle."""
    grids = grids if grids is not None else reference_pieces(cfg.problem, cfg.oracle_nodes)
    leaves = sol.leaves()
    if len(grids) != len(leaves):
        raise OracleError("oracle pieces do not match the solution pieces")
    out = []
    for leaf, grid in zip(leaves, grids):
        rep = value_bounds_check(leaf.psi_l, leaf.psi_u, grid.x, grid.values, tol=POINT_TOL)
        eps = leaf.epsilon
        d = rep.to_dict()
        d.update(interval=[grid.a, grid.b], epsilon=eps,
                 error_bound_ok=bool(rep.max_err_lower <= eps + POINT_TOL and rep.max_err_upper <= eps + POINT_TOL))
        d["ok"] = bool(d["ok"] and d["error_bound_ok"])
        out.append(d)
    return out


def verify_solution(cfg: RunConfig, sol: RelaxationSolution, grids=None) -> dict:
    p = cfg.problem
    v = ValueFunction.from_solution(sol)
    pts = audit_grid(cfg)
    audit = sclf_audit(v, p, pts)
    vals = []
    for x in pts:
        try:
            vals.append(value_at(v, x))
        except NonpositiveDesirability:
            vals.append(math.inf)
    vals = np.array(vals)
    v_sup = float(np.max(vals))
    origin = np.zeros(p.nvars)
    v0 = value_at(v, origin)
    positive = {"v_at_origin": v0, "min_v_on_grid": float(np.min(vals)),
                "ok": bool(abs(v0) <= 1e-9 and np.min(vals) > 0)}
    result = {
        "degree": sol.degree,
        "epsilon": sol.epsilon,
        "sclf": audit.to_dict(),
        "positive_definite": positive,
        "suboptimality": {"v_sup_norm_estimate": v_sup, "lambda": p.lam,
                          "bound": suboptimality_bound(max(sol.epsilon, 0.0), v_sup, p.lam)},
    }
    if p.nvars == 1:
        result["oracle"] = {"status": "checked", "pieces": oracle_checks(cfg, sol, grids)}
        oracle_ok = all(d["ok"] for d in result["oracle"]["pieces"])
    else:
        result["oracle"] = {"status": "skipped", "reason": "finite-difference oracle is one-dimensional"}
        oracle_ok = True
    result["ok"] = bool(audit.ok and positive["ok"] and oracle_ok)
    if math.isinf(result["suboptimality"]["bound"]):
        result["suboptimality"]["bound"] = "inf"
    return result


# --------------------------------------------------------------------------
# commands


def _parse_degrees(text: str | None, cfg: RunConfig) -> tuple[int, int]:
    if text is None:
        return cfg.d_min, cfg.d_max
    try:
        a, b = (int(t) for t in text.split(":"))
    except ValueError:
        raise UsageError(f"--degrees expects A:B, got {text!r}") from None
    if a > b or a % 2 or b % 2 or a < 2:
        raise UsageError("--degrees needs even A <= B with A >= 2")
    return a, b


def cmd_solve(cfg: RunConfig, out: Path, degrees: str | None, force: bool) -> int:
    d_min, d_max = _parse_degrees(degrees, cfg)
    target = out / "solve"
    with _atomic_dir(target, force) as tmp:
        results = solve_hierarchy(cfg.problem, d_min, d_max, cfg.solver, cfg.partition_axes)
        report = _header(cfg, "solve")
        report["degrees"] = [solution_to_dict(r) for r in results]
        seq: dict[str, list] = {}
        for r in results:
            for k, leaf in enumerate(r.leaves()):
                if leaf.feasible:
                    seq.setdefault(str(k), []).append([r.degree, leaf.epsilon])
        report["epsilon_sequence"] = seq
        pts = sample_grid(cfg)
        names = list(cfg.problem.names)
        for r in results:
            if not r.feasible:
                continue
            pl, pu = r.eval_psi_l(pts), r.eval_psi_u(pts)
            with open(tmp / f"degree_{r.degree:02d}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(names + ["psi_l", "psi_u", "v_u"])
                for x, a, b in zip(pts, pl, pu):
                    vu = -cfg.problem.lam * math.log(a) if a > 0 else math.inf
                    w.writerow([_fmt(c) for c in x] + [_fmt(a), _fmt(b), _fmt(vu)])
        _dump_json(report, tmp / "report.json")
    for r in results:
        log.info("degree %d: %s eps=%s", r.degree, r.status, r.epsilon)
    failed = [r for r in results if r.status in (SdpStatus.NUMERICAL_FAILURE.value, SdpStatus.MAX_ITER.value)]
    if failed or not any(r.feasible for r in results):
        return EXIT_SOLVER
    return EXIT_OK


def _pick_degree(sols: dict[int, RelaxationSolution], degree: int | None) -> RelaxationSolution:
    if degree is None:
        feasible = [d for d, s in sols.items() if s.feasible]
        if not feasible:
            raise UsageError("no feasible degree in the solve report")
        degree = max(feasible)
    if degree not in sols:
        raise UsageError(f"degree {degree} was not solved")
    if not sols[degree].feasible:
        raise UsageError(f"degree {degree} is not feasible ({sols[degree].status})")
    return sols[degree]


def cmd_simulate(cfg: RunConfig, out: Path, degree: int | None, seed: int | None, runs: int | None,
                 force: bool) -> int:
    sol = _pick_degree(_load_solutions(cfg, out), degree)
    sim = SimConfig(cfg.sim.dt, cfg.sim.origin_ball, cfg.sim.max_time,
                    cfg.sim.rng_seed if seed is None else seed, cfg.sim.num_runs if runs is None else runs)
    if sim.num_runs < 2:
        raise UsageError("--runs must be at least 2 (the standard error needs two samples)")
    v = ValueFunction.from_solution(sol)
    ctrl = Controller(v, cfg.problem)
    x0 = np.array(cfg.x0)
    with _atomic_dir(out / f"simulate_d{sol.degree:02d}", force) as tmp:
        mc = monte_carlo(cfg.problem, ctrl, x0, sim)
        for i, traj in enumerate(mc.trajectories):
            traj.to_csv(tmp / f"run_{i:03d}.csv")
        vu = value_at(v, x0)
        summary = _header(cfg, "simulate")
        summary.update(
            degree=sol.degree, x0=list(cfg.x0), seed=sim.rng_seed, runs=sim.num_runs, dt=sim.dt,
            origin_ball=sim.origin_ball, v_u_x0=vu, monte_carlo=mc.to_dict(),
            median_exit_time=float(np.median(mc.exit_times)),
            cost_bound_ok=bool(mc.mean_cost <= vu + 2 * mc.std_err),
        )
        _dump_json(summary, tmp / "summary.json")
    log.info("degree %d: mean J_u = %.4f +- %.4f, V_u(x0) = %.4f", sol.degree, mc.mean_cost, mc.std_err, vu)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, degree: int | None, force: bool) -> int:
    sols = _load_solutions(cfg, out)
    chosen = [_pick_degree(sols, degree)] if degree is not None else [s for _, s in sorted(sols.items()) if s.feasible]
    if not chosen:
        raise UsageError("no feasible degree to verify")
    name = f"verify_d{degree:02d}" if degree is not None else "verify"
    grids = reference_pieces(cfg.problem, cfg.oracle_nodes) if cfg.problem.nvars == 1 else None
    with _atomic_dir(out / name, force) as tmp:
        report = _header(cfg, "verify")
        report["degrees"] = [verify_solution(cfg, s, grids) for s in chosen]
        report["ok"] = all(d["ok"] for d in report["degrees"])
        _dump_json(report, tmp / "report.json")
    for d in report["degrees"]:
        log.info("degree %d: %s", d["degree"], "ok" if d["ok"] else "VIOLATIONS")
    return EXIT_OK if report["ok"] else EXIT_VERIFY


def cmd_oracle(cfg: RunConfig, out: Path, force: bool) -> int:
    p = cfg.problem
    if p.nvars != 1:
        raise UsageError("the oracle command supports one-dimensional problems only")
    grids = reference_pieces(p, cfg.oracle_nodes)
    with _atomic_dir(out / "oracle", force) as tmp:
        report = _header(cfg, "oracle")
        report["pieces"] = []
        for k, g in enumerate(grids):
            g.to_csv(tmp / f"oracle_piece{k}.csv", p.lam)
            report["pieces"].append({
                "interval": [g.a, g.b], "nodes": g.n, "boundary": [float(g.values[0]), float(g.values[-1])],
                "sup_norm_estimate": sup_norm_estimate(g, p.lam),
                "refinement_change": richardson_change(p, (g.a, g.b), (g.values[0], g.values[-1]), g.n),
            })
        _dump_json(report, tmp / "report.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjbsos", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hjbsos {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default="results", help="output root directory (default: results)")
        sp.add_argument("--force", action="store_true", help="replace existing results")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("solve", help="solve the SOS hierarchy")
    common(sp)
    sp.add_argument("--degrees", metavar="A:B", help="even degree range, overrides the config")

    sp = sub.add_parser("simulate", help="Monte Carlo rollouts of the synthesized controller")
    common(sp)
    sp.add_argument("--degree", type=int, help="hierarchy degree (default: highest feasible)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--runs", type=int)

    sp = sub.add_parser("verify", help="SCLF audit, oracle sandwich and suboptimality bound")
    common(sp)
    sp.add_argument("--degree", type=int, help="hierarchy degree (default: every feasible degree)")

    sp = sub.add_parser("oracle", help="finite-difference reference solution (1-D)")
    common(sp)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.command == "solve":
            return cmd_solve(cfg, out, args.degrees, args.force)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.degree, args.seed, args.runs, args.force)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.degree, args.force)
        return cmd_oracle(cfg, out, args.force)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"hjbsos: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleError as exc:
        print(f"hjbsos: oracle error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
