"""Closed-loop Euler-Maruyama simulation and Monte Carlo cost estimates."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .control import Controller, NonpositiveDesirability
from .hjb import HjbProblem
from .poly import Polynomial


class ExitReason(str, Enum):
    ORIGIN = "OriginReached"
    BOUNDARY = "BoundaryExited"
    TIMEOUT = "TimedOut"


_CODES = {kernels.EXIT_ORIGIN: ExitReason.ORIGIN, kernels.EXIT_BOUNDARY: ExitReason.BOUNDARY,
          kernels.EXIT_TIMEOUT: ExitReason.TIMEOUT}


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.005
    origin_ball: float = 0.005
    max_time: float = 50.0
    rng_seed: int = 0
    num_runs: int = 20

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.origin_ball > 0:
            raise ValueError("origin_ball must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if self.num_runs < 1:
            raise ValueError("num_runs must be at least 1")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.max_time / self.dt - 1e-9))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    exit_reason: ExitReason
    running_cost: float
    terminal_cost: float
    cumulative_cost: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def total_cost(self) -> float:
        return self.running_cost + self.terminal_cost

    @property
    def exit_time(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path) -> None:
        """Columns t, x1..xn, u1..um, running_cost (cumulative)."""
        n, m = self.states.shape[1], self.controls.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)] + ["running_cost"])
            for t, x, u, c in zip(self.times, self.states, self.controls, self.cumulative_cost):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in u] + [repr(float(c))])


def step(x, u, p: HjbProblem, dt: float, noise_sample) -> np.ndarray:
    """x + (f + G u) dt + B sqrt(dt) z for a supplied z ~ N(0, Sigma_eps)."""
    x = np.asarray(x, dtype=float)
    drift = p.f.evaluate(x)[:, 0] + p.G.evaluate(x) @ np.asarray(u, dtype=float)
    return x + drift * dt + p.B.evaluate(x) @ np.asarray(noise_sample, dtype=float) * math.sqrt(dt)


def noise_factor(p: HjbProblem) -> np.ndarray:
    """A with A A^T = Sigma_eps (Cholesky, or eigen-based when singular)."""
    S = p.sigma_eps
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


def terminal_cost(p: HjbProblem, x) -> float:
    """phi = -lambda log psi of the boundary component nearest to x."""
    if not p.boundary:
        return 0.0
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    comp = min(p.boundary, key=lambda c: abs(float(c.factor.evaluate(pt)[0])))
    psi = float(comp.psi.evaluate(pt)[0])
    if not psi > 0:
        raise ValueError(f"boundary desirability {psi} at {pt[0].tolist()} is not positive")
    return -p.lam * math.log(psi)


class _Model:
    """Closed-loop polynomials packed for the rollout kernel."""

    def __init__(self, p: HjbProblem, c: Controller):
        n, m, l = p.nvars, p.ninputs, p.B.shape[1]
        polys: list[Polynomial] = [p.f[i, 0] for i in range(n)]
        polys += [p.G[i, j] for i in range(n) for j in range(m)]
        polys += [p.B[i, j] for i in range(n) for j in range(l)]
        polys.append(p.q)
        for piece in c.value.pieces:
            polys.append(piece.psi)
            polys.extend(piece.grad)
        leaf_ngen = []
        for piece in c.value.pieces:
            gens = piece.domain.generators if piece.domain is not None else ()
            polys.extend(gens)
            leaf_ngen.append(len(gens))
        polys.extend(p.domain.generators)
        self.packed = kernels.Packed(polys, n)
        self.layout = (n, m, l, len(c.value.pieces), len(p.domain.generators))
        self.leaf_ngen = leaf_ngen
        self.R = p.R
        self.Rinv = np.linalg.inv(p.R)
        self.lam = c.value.lam
        self.guard = c.value.guard
        self.chol = noise_factor(p)


def simulate(p: HjbProblem, c: Controller, x0, cfg: SimConfig, seed: int | None = None, impl=None) -> Trajectory:
    """One rollout from x0 until the origin ball, the boundary or max_time.

    Noise comes from numpy's default generator seeded with ``seed`` (default
    cfg.rng_seed), so a fixed seed reproduces the trajectory bit for bit.
    """
    if c.saturation is not None:
        raise ValueError("the rollout kernel does not clip controls; simulate with saturation=None")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if not p.domain.contains(x0.reshape(1, -1), tol=1e-12)[0]:
        raise ValueError(f"initial state {x0.tolist()} is outside the domain")
    model = _Model(p, c)
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    z = rng.standard_normal((cfg.max_steps, model.layout[2]))
    noise = z @ model.chol.T
    states, controls, costs, code = kernels.rollout(
        model.packed, model.layout, model.leaf_ngen, x0, cfg.dt, noise, model.R, model.Rinv,
        model.lam, cfg.origin_ball, model.guard, impl=impl,
    )
    if code == kernels.EXIT_GUARD:
        raise NonpositiveDesirability(states[-1], c.value.psi(states[-1]), c.value.guard)
    reason = _CODES[code]
    running = float(costs[-1])
    term = terminal_cost(p, states[-1]) if reason is ExitReason.BOUNDARY else 0.0
    times = np.arange(len(states)) * cfg.dt
    return Trajectory(times, states, controls, reason, running, term, costs)


@dataclass
class MonteCarloResult:
    mean_cost: float
    std_err: float
    costs: list[float]
    exits: dict[str, int]
    exit_times: list[float]
    timed_out: int
    trajectories: list[Trajectory] = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return dict(mean_cost=self.mean_cost, std_err=self.std_err, costs=self.costs, exits=self.exits,
                    exit_times=self.exit_times, timed_out=self.timed_out)


def monte_carlo(p: HjbProblem, c: Controller, x0, cfg: SimConfig, workers: int = 1) -> MonteCarloResult:
    """Independent rollouts with seeds rng_seed + i.

    Timed-out runs are reported but excluded from the mean; boundary exits
    are included with their terminal cost.
    """
    if cfg.num_runs < 2:
        raise ValueError("monte_carlo needs at least 2 runs for a standard error")
    seeds = [cfg.rng_seed + i for i in range(cfg.num_runs)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(lambda s: simulate(p, c, x0, cfg, seed=s), seeds))
    else:
        trajs = [simulate(p, c, x0, cfg, seed=s) for s in seeds]
    counted = [t.total_cost for t in trajs if t.exit_reason is not ExitReason.TIMEOUT]
    exits = {r.value: sum(t.exit_reason is r for t in trajs) for r in ExitReason}
    if len(counted) >= 2:
        arr = np.array(counted)
        mean, se = float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))
    else:
        mean = float(counted[0]) if counted else math.nan
        se = math.nan
    return MonteCarloResult(mean, se, [t.total_cost for t in trajs], exits,
                            [t.exit_time for t in trajs], exits[ExitReason.TIMEOUT.value], trajs)
