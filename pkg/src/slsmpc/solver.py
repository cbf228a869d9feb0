"""Small convex-QP interface.

Programs have the form::

    minimize    0.5 x'Px + q'x
    subject to  C x  = d
                A x <= b

The default backend is Clarabel (primal-dual interior point). It returns
certificates of primal infeasibility, which the hyperparameter bisection
relies on. Extra backends can be registered with :func:`register_backend`.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"
    NUMERICAL_FAILURE = "NumericalFailure"


class SolverError(RuntimeError):
    pass


@dataclass
class Tolerances:
    feasibility: float = 1e-7
    stationarity: float = 1e-6
    max_iter: int = 200


@dataclass
class ConicProgram:
    """Sparse QP/LP data. ``P`` may be ``None`` for an LP."""

    n: int
    q: np.ndarray = None
    P: Optional[sp.spmatrix] = None
    C: Optional[sp.spmatrix] = None
    d: Optional[np.ndarray] = None
    A: Optional[sp.spmatrix] = None
    b: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        n = self.n
        self.q = np.zeros(n) if self.q is None else np.asarray(self.q, dtype=float).ravel()
        if self.P is not None:
            P = sp.csc_matrix(self.P, dtype=float)
            P = 0.5 * (P + P.T)
            self.P = sp.csc_matrix(P)
        self.C = sp.csr_matrix((0, n)) if self.C is None else sp.csr_matrix(self.C, dtype=float)
        self.A = sp.csr_matrix((0, n)) if self.A is None else sp.csr_matrix(self.A, dtype=float)
        self.d = np.zeros(0) if self.d is None else np.asarray(self.d, dtype=float).ravel()
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).ravel()
        if self.q.shape != (n,):
            raise ValueError("q has wrong length")
        if self.P is not None and self.P.shape != (n, n):
            raise ValueError("P has wrong shape")
        if self.C.shape[1] != n or self.C.shape[0] != self.d.size:
            raise ValueError("equality data inconsistent")
        if self.A.shape[1] != n or self.A.shape[0] != self.b.size:
            raise ValueError("inequality data inconsistent")

    @property
    def is_lp(self) -> bool:
        return self.P is None or self.P.nnz == 0

    def check_psd(self, floor: float = -1e-9) -> bool:
        if self.is_lp:
            return True
        # dense eigvals is fine at the sizes generated here
        return float(np.linalg.eigvalsh(self.P.toarray()).min()) >= floor

    def objective(self, x: np.ndarray) -> float:
        val = float(self.q @ x)
        if self.P is not None:
            val += 0.5 * float(x @ (self.P @ x))
        return val

    def residual(self, x: np.ndarray) -> float:
        """Max absolute constraint violation at ``x``."""
        r = 0.0
        if self.d.size:
            r = max(r, float(np.max(np.abs(self.C @ x - self.d))))
        if self.b.size:
            r = max(r, float(np.max(self.A @ x - self.b, initial=0.0)))
        return r

    # -- debug dump -------------------------------------------------------

    def to_json(self) -> dict:
        def coo(M):
            if M is None:
                return None
            M = sp.coo_matrix(M)
            return {"shape": list(M.shape), "row": M.row.tolist(), "col": M.col.tolist(), "data": M.data.tolist()}

        return {
            "format": "slsmpc.ConicProgram/1",
            "form": "min 0.5 x'Px + q'x s.t. Cx = d, Ax <= b",
            "name": self.name,
            "n": self.n,
            "q": self.q.tolist(),
            "P": coo(self.P),
            "C": coo(self.C),
            "d": self.d.tolist(),
            "A": coo(self.A),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConicProgram":
        def mat(o):
            if o is None:
                return None
            return sp.coo_matrix((o["data"], (o["row"], o["col"])), shape=tuple(o["shape"]))

        return cls(n=obj["n"], q=np.array(obj["q"]), P=mat(obj["P"]), C=mat(obj["C"]), d=np.array(obj["d"]),
                   A=mat(obj["A"]), b=np.array(obj["b"]), name=obj.get("name", ""))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


@dataclass
class SolveResult:
    status: Status
    x: Optional[np.ndarray]
    objective: float
    iterations: int = 0
    wall_time: float = 0.0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    certificate: Optional[np.ndarray] = None
    backend: str = ""
    info: Dict[str, object] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# -- backends ---------------------------------------------------------------

Backend = Callable[[ConicProgram, Tolerances], SolveResult]
_BACKENDS: Dict[str, Backend] = {}


def register_backend(name: str, fn: Backend) -> None:
    _BACKENDS[name] = fn


def backends():
    return sorted(_BACKENDS)


def _stacked(prog: ConicProgram):
    A = sp.vstack([prog.C, prog.A], format="csc")
    rhs = np.concatenate([prog.d, prog.b])
    return A, rhs


def _clarabel(prog: ConicProgram, tol: Tolerances) -> SolveResult:
    import clarabel

    n = prog.n
    P = sp.triu(prog.P, format="csc") if prog.P is not None else sp.csc_matrix((n, n))
    A, rhs = _stacked(prog)
    cones = []
    if prog.d.size:
        cones.append(clarabel.ZeroConeT(prog.d.size))
    if prog.b.size:
        cones.append(clarabel.NonnegativeConeT(prog.b.size))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = tol.max_iter
    settings.tol_feas = min(1e-8, tol.feasibility)
    settings.tol_gap_abs = 1e-8
    settings.tol_gap_rel = 1e-8
    settings.presolve_enable = True
    t0 = time.perf_counter()
    if not cones:
        # clarabel needs at least one constraint; add a vacuous row
        A = sp.csc_matrix((1, n))
        rhs = np.ones(1)
        cones = [clarabel.NonnegativeConeT(1)]
    sol = clarabel.DefaultSolver(P, prog.q, A, rhs, cones, settings).solve()
    wall = time.perf_counter() - t0
    name = str(sol.status).split(".")[-1]
    x = np.array(sol.x)
    res = SolveResult(Status.NUMERICAL_FAILURE, None, float("nan"), iterations=int(sol.iterations),
                      wall_time=wall, backend="clarabel", info={"raw_status": name})
    if name == "Solved":
        res.status, res.x, res.objective = Status.OPTIMAL, x, prog.objective(x)
    elif name == "PrimalInfeasible":
        res.status = Status.PRIMAL_INFEASIBLE
        res.certificate = np.array(sol.z)
    elif name == "DualInfeasible":
        res.status = Status.UNBOUNDED
    elif name == "MaxIterations":
        res.status = Status.ITERATION_LIMIT
    return res


def _osqp(prog: ConicProgram, tol: Tolerances) -> SolveResult:
    import osqp

    n = prog.n
    P = sp.triu(prog.P, format="csc") if prog.P is not None else sp.csc_matrix((n, n))
    A, _ = _stacked(prog)
    lo = np.concatenate([prog.d, np.full(prog.b.size, -np.inf)])
    hi = np.concatenate([prog.d, prog.b])
    solver = osqp.OSQP()
    solver.setup(P=P, q=prog.q, A=sp.csc_matrix(A), l=lo, u=hi, verbose=False, eps_abs=1e-10, eps_rel=1e-10,
                 max_iter=200000, polishing=True, polish_refine_iter=10)
    t0 = time.perf_counter()
    out = solver.solve(raise_error=False)
    wall = time.perf_counter() - t0
    status = str(out.info.status).lower()
    res = SolveResult(Status.NUMERICAL_FAILURE, None, float("nan"), iterations=int(out.info.iter),
                      wall_time=wall, backend="osqp", info={"raw_status": status})
    if status.startswith("solved"):
        x = np.array(out.x)
        res.status, res.x, res.objective = Status.OPTIMAL, x, prog.objective(x)
    elif "primal infeasible" in status:
        res.status = Status.PRIMAL_INFEASIBLE
        res.certificate = None if out.prim_inf_cert is None else np.array(out.prim_inf_cert)
    elif "dual infeasible" in status:
        res.status = Status.UNBOUNDED
    elif "maximum iterations" in status:
        res.status = Status.ITERATION_LIMIT
    return res


def _highs(prog: ConicProgram, tol: Tolerances) -> SolveResult:
    from scipy.optimize import linprog

    if not prog.is_lp:
        raise SolverError("the highs backend handles LPs only")
    t0 = time.perf_counter()
    out = linprog(prog.q, A_ub=prog.A if prog.b.size else None, b_ub=prog.b if prog.b.size else None,
                  A_eq=prog.C if prog.d.size else None, b_eq=prog.d if prog.d.size else None,
                  bounds=(None, None), method="highs")
    wall = time.perf_counter() - t0
    mapping = {0: Status.OPTIMAL, 1: Status.ITERATION_LIMIT, 2: Status.PRIMAL_INFEASIBLE, 3: Status.UNBOUNDED}
    res = SolveResult(mapping.get(out.status, Status.NUMERICAL_FAILURE), None, float("nan"),
                      iterations=int(getattr(out, "nit", 0)), wall_time=wall, backend="highs",
                      info={"raw_status": out.message})
    if res.status is Status.OPTIMAL:
        res.x = np.array(out.x)
        res.objective = prog.objective(res.x)
    return res


register_backend("clarabel", _clarabel)
register_backend("osqp", _osqp)
register_backend("highs", _highs)


def _verify_certificate(prog: ConicProgram, y: np.ndarray, tol: float = 1e-7) -> bool:
    """Farkas check: y = (y_eq, y_ineq) with y_ineq >= 0, [C; A]'y ~ 0, [d; b]'y < 0."""
    A, rhs = _stacked(prog)
    if y is None or y.size != rhs.size:
        return False
    ne = prog.d.size
    y = y / max(np.max(np.abs(y)), 1e-300)
    if np.any(y[ne:] < -tol):
        return False
    gap = float(rhs @ y)
    stat = float(np.max(np.abs(A.T @ y), initial=0.0))
    return gap < 0 and stat <= tol * max(1.0, abs(gap)) * 1e3 and stat < -gap


def solve(program: ConicProgram, tolerances: Optional[Tolerances] = None, backend: str = "clarabel") -> SolveResult:
    """Solve ``program`` and post-check the answer.

    ``Optimal`` is only reported when the returned point satisfies all
    constraints within ``tolerances.feasibility`` (scaled by ``1 + |rhs|``);
    ``PrimalInfeasible`` only when a Farkas certificate checks out. Anything
    else becomes ``NumericalFailure``.
    """
    tol = tolerances or Tolerances()
    try:
        fn = _BACKENDS[backend]
    except KeyError:
        raise SolverError(f"unknown backend {backend!r}; have {backends()}") from None
    res = fn(program, tol)
    scale = 1.0 + max(np.max(np.abs(program.b), initial=0.0), np.max(np.abs(program.d), initial=0.0))
    if res.status is Status.OPTIMAL:
        res.primal_residual = program.residual(res.x)
        if res.primal_residual > tol.feasibility * scale:
            res.info["downgraded"] = f"residual {res.primal_residual:.3g}"
            res.status = Status.NUMERICAL_FAILURE
    elif res.status is Status.PRIMAL_INFEASIBLE and backend != "highs":
        if not _verify_certificate(program, res.certificate):
            res.info["downgraded"] = "certificate failed verification"
            res.status = Status.NUMERICAL_FAILURE
    return res


def check_feasible(program: ConicProgram, tolerances: Optional[Tolerances] = None,
                   backend: str = "clarabel") -> bool:
    """True iff the (zero-objective) program solves to ``Optimal``.

    Raises :class:`SolverError` on a numerical failure so callers can decide
    how to treat an inconclusive verdict.
    """
    res = solve(program, tolerances, backend)
    if res.status is Status.OPTIMAL:
        return True
    if res.status is Status.PRIMAL_INFEASIBLE:
        return False
    raise SolverError(f"inconclusive feasibility check ({res.status.value}, {res.info})")
