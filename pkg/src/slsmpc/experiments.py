"""Experiment configuration and the drivers behind the command line.

Each ``cmd_*`` function takes a validated :class:`ExperimentConfig`, writes
its data files into an output directory and returns a small summary dict.
CSV files hold only deterministic content (no timings), so a fixed config
and seed reproduce them byte for byte; timings go to the JSON records.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .constraints import ConstraintSet
from .polytope import NonConvergenceError, Polytope, max_robust_invariant_set
from .relaxation import Relaxation, SearchConfig, mpc_step, offline_bounds
from .sampling import _is_vertex, sample_ball_matrix, sample_disturbance
from .sls import CostWeights, LtvModel
from .tube import TubeShape, build_tube_program, make_zinv_shape, solve_tube, tube_variable_count

log = logging.getLogger(__name__)

RNG_NAME = "numpy.PCG64/1"
METHODS = ("sls", "tube_unit", "tube_zinv")
Matrix = List[List[float]]


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Spec):
    A: List[Any]  # n x n, or a list of T such matrices
    B: List[Any]
    eps_A: float = Field(0.0, ge=0)
    eps_B: float = Field(0.0, ge=0)
    sigma_w: float = Field(0.0, ge=0)

    def matrices(self, T: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        out = []
        for M in (self.A, self.B):
            arr = np.asarray(M, dtype=float)
            if arr.ndim == 2:
                out.append([arr] * T)
            elif arr.ndim == 3:
                if arr.shape[0] < T:
                    raise ValueError(f"per-step matrices cover {arr.shape[0]} steps, horizon is {T}")
                out.append(list(arr[:T]))
            else:
                raise ValueError("A and B must be matrices or lists of matrices")
        return out[0], out[1]

    @property
    def n(self) -> int:
        return np.asarray(self.A, dtype=float).shape[-1]

    @property
    def m(self) -> int:
        return np.asarray(self.B, dtype=float).shape[-1]


class TerminalSpec(_Spec):
    mode: Literal["dp_computed", "explicit"] = "dp_computed"
    F: Optional[Matrix] = None
    b: Optional[List[float]] = None

    @model_validator(mode="after")
    def _explicit_needs_rows(self):
        if self.mode == "explicit" and (self.F is None or self.b is None):
            raise ValueError("explicit terminal set needs F and b")
        return self


class ConstraintSpec(_Spec):
    F_x: Matrix
    b_x: List[float]
    F_u: Matrix
    b_u: List[float]
    terminal: TerminalSpec = TerminalSpec()


class CostSpec(_Spec):
    Q: Matrix
    R: Matrix
    QT: Optional[Matrix] = None


class SearchSpec(_Spec):
    eps_tol: float = Field(0.01, gt=0)
    ranges: List[Tuple[float, float]] = [(0.0, 10.0)] * 3
    grid_dims: Tuple[int, int, int] = (3, 3, 3)
    refine_dims: Optional[Tuple[int, int, int]] = (5, 5, 5)
    alpha: float = Field(0.5, gt=0, lt=1)

    @field_validator("ranges")
    @classmethod
    def _ranges(cls, v):
        if len(v) != 3 or any(lo < 0 or hi <= lo for lo, hi in v):
            raise ValueError("need three nonnegative ranges with lo < hi")
        return v

    def to_config(self, **kw) -> SearchConfig:
        return SearchConfig(eps_tol=self.eps_tol, ranges=tuple(tuple(r) for r in self.ranges),
                            grid_dims=tuple(self.grid_dims),
                            refine_dims=None if self.refine_dims is None else tuple(self.refine_dims),
                            alpha=self.alpha, **kw)


class SimulationSpec(_Spec):
    x0: Optional[List[float]] = None
    episodes: int = Field(10, ge=1)
    steps: int = Field(10, ge=1)
    sampling: Literal["vertices", "interior", "mixed"] = "mixed"
    structure: Literal["constant", "memoryless"] = "constant"


class TubeSpec(_Spec):
    zinv_truncation_tol: float = Field(1e-2, gt=0)


class FeasmapSpec(_Spec):
    spacing: float = Field(0.5, gt=0)
    lo: Optional[List[float]] = None  # defaults to the bounding box of X_T
    hi: Optional[List[float]] = None


class BenchSpec(_Spec):
    horizons: List[int] = [4, 6, 8, 10]
    repetitions: int = Field(5, ge=1)


class ExperimentConfig(_Spec):
    name: str = "experiment"
    model: ModelSpec
    constraints: ConstraintSpec
    horizon: int = Field(6, ge=1)
    cost: CostSpec
    search: SearchSpec = SearchSpec()
    simulation: SimulationSpec = SimulationSpec()
    tube: TubeSpec = TubeSpec()
    feasmap: FeasmapSpec = FeasmapSpec()
    bench: BenchSpec = BenchSpec()
    method: Literal["sls", "tube_unit", "tube_zinv", "all"] = "sls"
    seed: int = Field(0, ge=0)
    rng: Literal["numpy.PCG64/1"] = RNG_NAME

    @model_validator(mode="after")
    def _dimensions(self):
        n, m = self.model.n, self.model.m
        A, B = np.asarray(self.model.A, dtype=float), np.asarray(self.model.B, dtype=float)
        if A.shape[-2:] != (n, n) or B.shape[-2] != n:
            raise ValueError(f"A must be {n}x{n} and B must have {n} rows")
        c = self.constraints
        checks = [
            (np.asarray(c.F_x).shape == (len(c.b_x), n), "F_x must have n columns and one row per b_x entry"),
            (np.asarray(c.F_u).shape == (len(c.b_u), m), "F_u must have m columns and one row per b_u entry"),
            (np.asarray(self.cost.Q).shape == (n, n), "Q must be n x n"),
            (np.asarray(self.cost.R).shape == (m, m), "R must be m x m"),
            (self.cost.QT is None or np.asarray(self.cost.QT).shape == (n, n), "QT must be n x n"),
        ]
        if c.terminal.mode == "explicit":
            checks.append((np.asarray(c.terminal.F).shape == (len(c.terminal.b), n), "terminal F must have n columns"))
        if self.simulation.x0 is not None:
            checks.append((len(self.simulation.x0) == n, "x0 must have n entries"))
        for f in ("lo", "hi"):
            v = getattr(self.feasmap, f)
            if v is not None:
                checks.append((len(v) == n, f"feasmap.{f} must have n entries"))
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        return self

    @property
    def methods(self) -> Tuple[str, ...]:
        return METHODS if self.method == "all" else (self.method,)

    def config_hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        data = self.model_dump(mode="json")
        for k, v in kw.items():
            if v is not None:
                data[k] = v
        return ExperimentConfig.model_validate(data)

    # -- builders ---------------------------------------------------------

    def build_model(self, T: Optional[int] = None) -> LtvModel:
        T = self.horizon if T is None else T
        A, B = self.model.matrices(T)
        return LtvModel(A, B, eps_A=self.model.eps_A, eps_B=self.model.eps_B, sigma_w=self.model.sigma_w)

    def build_weights(self, T: Optional[int] = None) -> CostWeights:
        T = self.horizon if T is None else T
        QT = None if self.cost.QT is None else np.asarray(self.cost.QT, dtype=float)
        return CostWeights.lti(np.asarray(self.cost.Q, dtype=float), np.asarray(self.cost.R, dtype=float), T, QT)

    @property
    def X(self) -> Polytope:
        return Polytope(self.constraints.F_x, self.constraints.b_x)

    @property
    def U(self) -> Polytope:
        return Polytope(self.constraints.F_u, self.constraints.b_u)


def default_config_path() -> Path:
    return Path(str(resources.files("slsmpc") / "configs" / "double_integrator.json"))


def load_config(path=None) -> ExperimentConfig:
    path = default_config_path() if path is None else Path(path)
    return ExperimentConfig.model_validate(json.loads(Path(path).read_text()))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, k: int) -> List[np.random.Generator]:
    """Independent per-task streams derived from the master seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(k)]


# -- terminal set -------------------------------------------------------------

_TERMINAL_CACHE: Dict[str, Any] = {}


def terminal_set(cfg: ExperimentConfig):
    """``(X_T, InvariantSetResult or None)``; DP results are cached per model and constraints."""
    t = cfg.constraints.terminal
    if t.mode == "explicit":
        return Polytope(t.F, t.b), None
    key = json.dumps([cfg.model.model_dump(mode="json"), cfg.constraints.F_x, cfg.constraints.b_x,
                      cfg.constraints.F_u, cfg.constraints.b_u], sort_keys=True)
    if key not in _TERMINAL_CACHE:
        _TERMINAL_CACHE[key] = max_robust_invariant_set(cfg.X, cfg.U, cfg.build_model(1))
    res = _TERMINAL_CACHE[key]
    return res.set, res


def constraint_set(cfg: ExperimentConfig) -> ConstraintSet:
    XT, _ = terminal_set(cfg)
    c = cfg.constraints
    return ConstraintSet(c.F_x, c.b_x, c.F_u, c.b_u, XT.F, XT.b)


# -- planners -----------------------------------------------------------------

@dataclass
class Plan:
    status: str  # feasible | infeasible_certified | unverified | infeasible | solver_failure
    u0: Optional[np.ndarray] = None
    objective: float = math.nan
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    @property
    def certified_infeasible(self) -> bool:
        return self.status in ("infeasible_certified", "infeasible")


class Planner:
    """One MPC method at a fixed horizon, with the x0-independent work done once."""

    def __init__(self, cfg: ExperimentConfig, method: str, T: Optional[int] = None, status_only: bool = False):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; have {METHODS}")
        self.cfg, self.method = cfg, method
        self.T = cfg.horizon if T is None else T
        self.model = cfg.build_model(self.T)
        self.weights = cfg.build_weights(self.T)
        self.constraints = constraint_set(cfg)
        self.offline = None
        if method == "sls":
            self.search = cfg.search.to_config(first_feasible=status_only)
            self.relax = Relaxation(self.model, self.constraints, self.weights, alpha=self.search.alpha)
            self.offline = offline_bounds(self.relax, self.search)
        elif method == "tube_unit":
            self.shape = TubeShape.unit(self.model.n)
        else:
            self.shape = make_zinv_shape(self.model, self.weights.Q[0], self.weights.R[0],
                                         truncation_tol=cfg.tube.zinv_truncation_tol)

    @property
    def n_variables(self) -> int:
        if self.method == "sls":
            return self.relax.layout.size
        return tube_variable_count(self.T, self.model.n, self.model.m, self.shape.V)

    def plan(self, x0) -> Plan:
        x0 = np.asarray(x0, dtype=float).ravel()
        if self.method == "sls":
            step = mpc_step(self.model, self.constraints, x0, self.weights, self.search, self.relax, self.offline)
            sol, b = step.solution, step.bounds
            info = {
                "bounds": b.to_dict(),
                "hyper": None if sol.hyper is None else list(sol.hyper.as_tuple()),
                "timings": {**step.timings, "qp_count": sol.grid_points},
            }
            return Plan(sol.status.value, step.u0, sol.objective, info)
        tp = build_tube_program(self.model, self.constraints, x0, self.shape, self.weights)
        sol = solve_tube(tp)
        info = {"timings": {"total": sol.wall_time}, "n_constraints": tp.n_constraints,
                "V": self.shape.V, "H": self.shape.H}
        return Plan(sol.status, sol.u0, sol.objective, info)


# -- output helpers -----------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# -- commands -----------------------------------------------------------------

def cmd_invset(cfg: ExperimentConfig, out) -> Dict[str, Any]:
    """Compute X_T and write ``invset.json`` (H-rep, V-rep and the iteration log)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        XT, res = terminal_set(cfg)
    except NonConvergenceError as exc:
        _write_json(out / "invset.json", {"config_hash": cfg.config_hash(), "converged": False,
                                          "error": str(exc), "trace": exc.trace})
        raise
    record = {"config_hash": cfg.config_hash(), "converged": True, "polytope": XT.to_json(),
              "iterations": None if res is None else res.iterations,
              "trace": [] if res is None else res.trace}
    _write_json(out / "invset.json", record)
    return {"empty": XT.is_empty(), "facets": int(XT.F.shape[0]),
            "vertices": 0 if XT.is_empty() else len(XT.vertices),
            "iterations": record["iterations"]}


_WORKER: Dict[str, Planner] = {}


def _planner(cfg_json: str, method: str, T: Optional[int] = None, status_only: bool = False) -> Planner:
    """Per-process planner cache so pool workers build each planner once."""
    key = f"{method}:{T}:{status_only}:{hashlib.sha256(cfg_json.encode()).hexdigest()}"
    if key not in _WORKER:
        _WORKER[key] = Planner(ExperimentConfig.model_validate_json(cfg_json), method, T, status_only)
    return _WORKER[key]


def _episode_task(args):
    cfg_json, method, x0, rng, steps, sampling, structure = args
    return _run_episode(_planner(cfg_json, method), x0, rng, steps, sampling, structure)


def _run_episode(planner: Planner, x0, rng: np.random.Generator, steps: int, sampling: str, structure: str):
    model = planner.model
    n, m = model.n, model.m
    A, B = model.A[0], model.B[0]
    XT, _ = terminal_set(planner.cfg)
    X, U = planner.cfg.X, planner.cfg.U
    vertex = _is_vertex(sampling, rng)
    dA = sample_ball_matrix(n, n, model.eps_A, rng, vertex)
    dB = sample_ball_matrix(n, m, model.eps_B, rng, vertex)
    x = np.asarray(x0, dtype=float).ravel()
    rows, steps_log = [], []
    aborted = None
    for k in range(steps):
        plan = planner.plan(x)
        if not plan.feasible:
            aborted = {"step": k, "status": plan.status, "state": x.tolist()}
            rows.append([k, *map(_fmt, x), *["nan"] * m, plan.status, _fmt(np.min(X.b - X.F @ x)), "nan",
                         int(XT.contains(x))])
            steps_log.append({"step": k, "status": plan.status, "x": x.tolist(),
                              "margin_x": float(np.min(X.b - X.F @ x)), **plan.info})
            break
        u = plan.u0
        mx = float(np.min(X.b - X.F @ x))
        mu = float(np.min(U.b - U.F @ u))
        rows.append([k, *map(_fmt, x), *map(_fmt, u), plan.status, _fmt(mx), _fmt(mu), int(XT.contains(x))])
        steps_log.append({"step": k, "status": plan.status, "x": x.tolist(), "u": u.tolist(),
                          "objective": plan.objective, "margin_x": mx, "margin_u": mu, **plan.info})
        if structure == "memoryless" and k > 0:
            vertex = _is_vertex(sampling, rng)
            dA = sample_ball_matrix(n, n, model.eps_A, rng, vertex)
            dB = sample_ball_matrix(n, m, model.eps_B, rng, vertex)
        w = sample_disturbance(n, 1, model.sigma_w, rng, vertex)[0]
        x = (A + dA) @ x + (B + dB) @ u + w
    else:
        mx = float(np.min(X.b - X.F @ x))
        rows.append([steps, *map(_fmt, x), *["nan"] * m, "final", _fmt(mx), "nan", int(XT.contains(x))])
        steps_log.append({"step": steps, "status": "final", "x": x.tolist(), "margin_x": mx})
    return rows, steps_log, aborted


def cmd_simulate(cfg: ExperimentConfig, out, jobs: int = 1) -> Dict[str, Any]:
    """Receding-horizon episodes on randomly perturbed plants.

    Per method writes ``trajectories_<method>.csv`` and ``run_<method>.json``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.simulation
    x0 = sim.x0 if sim.x0 is not None else [0.0] * cfg.model.n
    n, m = cfg.model.n, cfg.model.m
    header = ["episode", "step"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + \
        ["status", "margin_x", "margin_u", "in_terminal"]
    summary = {"config_hash": cfg.config_hash(), "methods": {}}
    cfg_json = cfg.model_dump_json()
    for method in cfg.methods:
        rngs = spawn_rngs(cfg.seed, sim.episodes)
        tasks = [(cfg_json, method, x0, rng, sim.steps, sim.sampling, sim.structure) for rng in rngs]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_episode_task, tasks))
        else:
            results = [_episode_task(t) for t in tasks]
        rows, episodes = [], []
        violations = 0
        infeasible_at_start = 0
        for e, (ep_rows, log_, aborted) in enumerate(results):
            rows += [[e] + r for r in ep_rows]
            bad = [s for s in log_ if s.get("margin_x", 0) < 0 or s.get("margin_u", 0) < 0]
            violations += len(bad)
            if aborted is not None and aborted["step"] == 0 and aborted["status"] in ("infeasible_certified",
                                                                                      "infeasible"):
                infeasible_at_start += 1
            episodes.append({"episode": e, "aborted": aborted, "steps": log_})
        _write_csv(out / f"trajectories_{method}.csv", header, rows)
        record = {"config_hash": cfg.config_hash(), "method": method, "horizon": cfg.horizon,
                  "sampling": sim.sampling, "structure": sim.structure, "rng": cfg.rng, "seed": cfg.seed,
                  "violations": violations, "infeasible_at_start": infeasible_at_start, "episodes": episodes}
        _write_json(out / f"run_{method}.json", record)
        summary["methods"][method] = {"episodes": sim.episodes, "violations": violations,
                                      "infeasible_at_start": infeasible_at_start,
                                      "aborted": sum(ep["aborted"] is not None for ep in episodes)}
    return summary


def feasmap_grid(cfg: ExperimentConfig) -> np.ndarray:
    """Grid points on multiples of the spacing inside ``[lo, hi]`` (default: bounding box of X_T)."""
    fm = cfg.feasmap
    if fm.lo is None or fm.hi is None:
        XT, _ = terminal_set(cfg)
        if XT.is_empty():
            return np.zeros((0, cfg.model.n))
        lo_b, hi_b = XT.bounding_box()
    lo = np.asarray(fm.lo if fm.lo is not None else lo_b, dtype=float)
    hi = np.asarray(fm.hi if fm.hi is not None else hi_b, dtype=float)
    h = fm.spacing
    axes = [h * np.arange(math.ceil(a / h - 1e-9), math.floor(b / h + 1e-9) + 1) for a, b in zip(lo, hi)]
    if any(ax.size == 0 for ax in axes):
        return np.zeros((0, cfg.model.n))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _feas_point(args):
    cfg_json, method, T, x0 = args
    planner = _planner(cfg_json, method, T, status_only=True)
    try:
        plan = planner.plan(x0)
        status = plan.status
    except Exception as exc:  # a failed point must not end the sweep
        log.warning("feasmap point %s failed: %s", x0, exc)
        plan, status = None, "solver_failure"
    if planner.method == "sls" and status == "solver_failure":
        status = "unverified"
    t = {} if plan is None else plan.info.get("timings", {})
    return status, t.get("total", 0.0)


def cmd_feasmap(cfg: ExperimentConfig, out, jobs: int = 1, points: Optional[np.ndarray] = None) -> Dict[str, Any]:
    """Status of every grid point for each selected method; writes ``feasmap_<method>.csv``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    pts = feasmap_grid(cfg) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    pts = pts.reshape(-1, cfg.model.n)
    XT, _ = terminal_set(cfg)
    n = cfg.model.n
    header = [f"x{i}" for i in range(n)] + ["status", "in_terminal"]
    summary = {"config_hash": cfg.config_hash(), "horizon": cfg.horizon, "points": len(pts), "methods": {}}
    cfg_json = cfg.model_dump_json()
    for method in cfg.methods:
        tasks = [(cfg_json, method, cfg.horizon, p) for p in pts]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_feas_point, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
        else:
            results = [_feas_point(t) for t in tasks]
        inside = [bool(XT.contains(p)) for p in pts]
        rows = sorted([[*map(_fmt, p), s, int(i)] for p, (s, _), i in zip(pts, results, inside)],
                      key=lambda r: tuple(float(v) for v in r[:n]))
        _write_csv(out / f"feasmap_{method}.csv", header, rows)
        counts: Dict[str, int] = {}
        for s, _ in results:
            counts[s] = counts.get(s, 0) + 1
        info = {"counts": counts, "solver_time": sum(t for _, t in results),
                "feasible_outside_terminal": sum(s == "feasible" and not i for (s, _), i in zip(results, inside))}
        if method == "sls":
            planner = _planner(cfg_json, method, cfg.horizon, status_only=True)
            info["lb_tau"] = planner.offline.lb_tau.inner
            info["lb_beta"] = planner.offline.lb_beta.inner
        summary["methods"][method] = info
    _write_json(out / "feasmap_summary.json", summary)
    return summary


def cmd_bench(cfg: ExperimentConfig, out, horizons: Optional[Sequence[int]] = None,
              repetitions: Optional[int] = None) -> Dict[str, Any]:
    """Median solver time per horizon; SLS time sums the bisection LPs and grid QPs."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    horizons = list(horizons or cfg.bench.horizons)
    reps = repetitions or cfg.bench.repetitions
    x0 = cfg.simulation.x0 if cfg.simulation.x0 is not None else [0.0] * cfg.model.n
    methods = ("sls", "tube_zinv") if cfg.method == "all" else cfg.methods
    rows, detail = [], []
    for method in methods:
        for T in horizons:
            planner = Planner(cfg, method, T)
            totals, parts = [], []
            status = None
            for _ in range(reps):
                plan = planner.plan(x0)
                t = plan.info["timings"]
                total = t["total"]
                if method == "sls":
                    # the offline lower bounds are part of the solver work for one solve
                    total += planner.offline.solver_time
                    parts.append({"offline": planner.offline.solver_time, "bisection": t["bisection"],
                                  "grid": t["grid"], "total": total})
                totals.append(total)
                status = plan.status
            med = statistics.median(totals)
            rows.append([T, method, planner.n_variables, status, repr(med)])
            detail.append({"T": T, "method": method, "n_variables": planner.n_variables, "status": status,
                           "median_solver_time": med, "runs": totals, "breakdown": parts})
    _write_csv(out / "bench.csv", ["T", "method", "n_variables", "status", "median_solver_time"], rows)
    monotone = {}
    for method in methods:
        ts = [d["median_solver_time"] for d in detail if d["method"] == method]
        monotone[method] = all(b >= a for a, b in zip(ts, ts[1:]))
    summary = {"config_hash": cfg.config_hash(), "repetitions": reps, "results": detail,
               "monotone_growth": monotone}
    _write_json(out / "bench.json", summary)
    return summary
