"""JSON run configurations.

A single file fixes the problem data, the hierarchy range, solver and
simulation settings.  Example (the unstable scalar system)::

    {
      "name": "unstable_scalar",
      "variables": ["x"],
      "drift": ["-x^3 + 5*x^2 + 3*x"],
      "input_gain": [["1"]],
      "noise_gain": [["1"]],
      "state_cost": "x^2",
      "R": [[1.0]],
      "sigma_eps": [[1.0]],
      "lambda": 1.0,
      "domain": {"generators": ["1 - x^2"], "box": [[-1, 1]]},
      "boundary": [{"factor": "x + 1", "psi": 9.079985952496971e-4}, ...],
      "anchors": [{"point": [0], "value": 1.0}],
      "partition_axes": [0],
      "hierarchy": {"min_degree": 8, "max_degree": 20},
      ...
    }

Boundary data may be given as ``psi`` (number or polynomial string) or as
a terminal cost ``phi``, converted with psi = exp(-phi / lambda).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hjb import BoundaryComponent, HjbError, HjbProblem, solve_lambda
from .poly import PolyMatrix, Polynomial, PolynomialError
from .sdp import SdpSettings
from .sim import SimConfig
from .sos import SemialgebraicDomain


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class RunConfig:
    problem: HjbProblem
    raw: dict
    sha256: str
    d_min: int = 8
    d_max: int = 20
    partition_axes: tuple[int, ...] = ()
    solver: SdpSettings = field(default_factory=SdpSettings)
    sim: SimConfig = field(default_factory=SimConfig)
    x0: tuple[float, ...] = ()
    grid_points: int = 2001
    oracle_nodes: int = 2001
    audit_points: int = 2000
    audit_exclusion: float = 1e-3


def canonical_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _poly(text, names, where) -> Polynomial:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return Polynomial.constant(float(text), len(names))
    if not isinstance(text, str):
        raise ConfigError(where, f"expected a polynomial string, got {type(text).__name__}")
    try:
        return Polynomial.parse(text, names)
    except PolynomialError as exc:
        raise ConfigError(where, str(exc)) from None


def _poly_matrix(rows, names, where) -> PolyMatrix:
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ConfigError(where, "expected a non-empty list of rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ConfigError(where, "rows have different lengths")
    return PolyMatrix([[_poly(v, names, f"{where}[{i}][{j}]") for j, v in enumerate(r)] for i, r in enumerate(rows)])


def _matrix(rows, where) -> np.ndarray:
    try:
        arr = np.atleast_2d(np.asarray(rows, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(where, "expected a numeric matrix") from None
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(where, f"expected a square matrix, got shape {arr.shape}")
    return arr


def _get(raw: dict, key: str, where: str = ""):
    if key not in raw:
        raise ConfigError(where + key, "missing required field")
    return raw[key]


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    names = _get(raw, "variables")
    if not isinstance(names, list) or not names or not all(isinstance(n, str) for n in names):
        raise ConfigError("variables", "expected a non-empty list of names")
    n = len(names)
    drift = _get(raw, "drift")
    if not isinstance(drift, list) or len(drift) != n:
        raise ConfigError("drift", f"expected {n} polynomial strings")
    f = PolyMatrix.column([_poly(s, names, f"drift[{i}]") for i, s in enumerate(drift)])
    G = _poly_matrix(_get(raw, "input_gain"), names, "input_gain")
    B = _poly_matrix(_get(raw, "noise_gain"), names, "noise_gain")
    q = _poly(_get(raw, "state_cost"), names, "state_cost")
    R = _matrix(_get(raw, "R"), "R")
    S = _matrix(_get(raw, "sigma_eps"), "sigma_eps")
    if "lambda" in raw and raw["lambda"] is not None:
        lam = raw["lambda"]
        if not isinstance(lam, (int, float)) or not lam > 0:
            raise ConfigError("lambda", "expected a positive number")
        lam = float(lam)
    else:
        try:
            lam = solve_lambda(G, B, R, S)
        except HjbError as exc:
            raise ConfigError("lambda", f"not given and cannot be inferred: {exc}") from None

    dom = _get(raw, "domain")
    gens = tuple(_poly(g, names, f"domain.generators[{i}]") for i, g in enumerate(_get(dom, "generators", "domain.")))
    box = dom.get("box")
    if box is None or len(box) != n or any(len(b) != 2 or not b[0] < b[1] for b in box):
        raise ConfigError("domain.box", f"expected {n} intervals [lo, hi] with lo < hi")
    box = tuple((float(a), float(b)) for a, b in box)

    comps = []
    for i, item in enumerate(raw.get("boundary", [])):
        where = f"boundary[{i}]"
        factor = _poly(_get(item, "factor", where + "."), names, where + ".factor")
        if "psi" in item:
            psi = _poly(item["psi"], names, where + ".psi")
        elif "phi" in item:
            phi = item["phi"]
            if not isinstance(phi, (int, float)):
                raise ConfigError(where + ".phi", "expected a number")
            psi = Polynomial.constant(math.exp(-float(phi) / lam), n)
        else:
            raise ConfigError(where, "needs psi or phi")
        comps.append(BoundaryComponent(factor, psi, str(item.get("label", ""))))

    anchors = []
    for i, a in enumerate(raw.get("anchors", [{"point": [0.0] * n, "value": 1.0}])):
        pt = _get(a, "point", f"anchors[{i}].")
        if len(pt) != n:
            raise ConfigError(f"anchors[{i}].point", f"expected {n} coordinates")
        anchors.append((tuple(float(v) for v in pt), float(a.get("value", 1.0))))

    try:
        problem = HjbProblem(
            f=f, G=G, B=B, q=q, R=R, sigma_eps=S, lam=lam,
            domain=SemialgebraicDomain(gens, tuple(c.factor for c in comps), box),
            boundary=tuple(comps), anchors=tuple(anchors), names=tuple(names),
            label=str(raw.get("name", "")),
        )
    except HjbError as exc:
        raise ConfigError("<problem>", str(exc)) from None

    hier = raw.get("hierarchy", {})
    d_min, d_max = int(hier.get("min_degree", 8)), int(hier.get("max_degree", 20))
    axes = tuple(int(a) for a in raw.get("partition_axes", []))
    if any(not 0 <= a < n for a in axes):
        raise ConfigError("partition_axes", "axis out of range")

    solver_raw = raw.get("solver", {})
    try:
        solver = SdpSettings(**solver_raw)
    except TypeError as exc:
        raise ConfigError("solver", str(exc)) from None

    sim_raw = dict(raw.get("simulation", {}))
    x0 = tuple(float(v) for v in sim_raw.pop("x0", [0.0] * n))
    if len(x0) != n:
        raise ConfigError("simulation.x0", f"expected {n} coordinates")
    try:
        sim = SimConfig(
            dt=float(sim_raw.pop("dt", 0.005)), origin_ball=float(sim_raw.pop("origin_ball", 0.005)),
            max_time=float(sim_raw.pop("max_time", 50.0)), rng_seed=int(sim_raw.pop("seed", 0)),
            num_runs=int(sim_raw.pop("runs", 20)),
        )
    except ValueError as exc:
        raise ConfigError("simulation", str(exc)) from None
    if sim_raw:
        raise ConfigError("simulation", f"unknown keys {sorted(sim_raw)}")

    checks = raw.get("verification", {})
    return RunConfig(
        problem=problem, raw=raw, sha256=canonical_hash(raw), d_min=d_min, d_max=d_max,
        partition_axes=axes, solver=solver, sim=sim, x0=x0,
        grid_points=int(checks.get("grid_points", 2001)), oracle_nodes=int(checks.get("oracle_nodes", 2001)),
        audit_points=int(checks.get("audit_points", 2000)),
        audit_exclusion=float(checks.get("audit_exclusion", 1e-3)),
    )


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}", f"invalid JSON: {exc.msg} (column {exc.colno})") from None
    return parse_config(raw)
