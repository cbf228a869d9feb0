"""Robust SLS MPC: the convex relaxation, hyperparameter bounds and grid search.

For fixed hyperparameters ``(tau, gamma, beta)`` the relaxation is a QP over
the dense stacked response ``Phi = [Phi_x; Phi_u]`` split as
``[Phi^0 | Phi^w]`` (first block column / the rest):

* ``affine``: ``[I - ZA, -ZB] Phi = I``
* ``safety``: ``F_j Phi^0 x0 + ||F_j Phi^w||_1 S(tau) gamma + beta sigma_w <= b_j``
* ``beta``:   ``||F_j Phi^w||_1 + beta ||eps Phi^w||_inf <= beta``
* ``tau``:    ``||[eA/a Phi_x^w; eB/(1-a) Phi_u^w]||_inf <= tau``
* ``gamma``:  ``||[eA/a Phi_x^0; eB/(1-a) Phi_u^0] x0||_inf <= gamma``

with ``S(tau) = sum_{k<T} tau^k``, ``eps = eA + eB`` and split ``a`` (default 1/2).
Norms are encoded with absolute-value slacks so every program is an LP/QP.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .constraints import ConstraintSet
from .operator import BltOperator
from .sls import (CostWeights, LtvModel, ResponseLayout, SystemResponse, assemble_cost,
                  build_affine_constraint, first_column_map, realize_controller)
from .solver import ConicProgram, SolverError, Status, Tolerances, solve

log = logging.getLogger(__name__)

PARTS = ("affine", "safety", "beta", "tau", "gamma")
NAMES = ("tau", "gamma", "beta")


def geometric_sum(tau: float, T: int) -> float:
    """``sum_{k=0}^{T-1} tau^k``; no division, so ``tau = 1`` gives ``T``."""
    return float(sum(tau ** k for k in range(T)))


@dataclass(frozen=True)
class Hyperparameters:
    tau: float
    gamma: float
    beta: float
    alpha: float = 0.5

    def __post_init__(self):
        if min(self.tau, self.gamma, self.beta) <= 0:
            raise ValueError("tau, gamma and beta must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.tau, self.gamma, self.beta)


@dataclass
class SearchConfig:
    eps_tol: float = 0.01
    ranges: Tuple[Tuple[float, float], ...] = ((0.0, 10.0), (0.0, 10.0), (0.0, 10.0))
    grid_dims: Tuple[int, int, int] = (3, 3, 3)
    refine_dims: Optional[Tuple[int, int, int]] = (5, 5, 5)
    alpha: float = 0.5
    backoff: float = 1e-6
    first_feasible: bool = False
    backend: str = "clarabel"
    fallback_backend: Optional[str] = "highs"
    tolerances: Tolerances = field(default_factory=Tolerances)

    def range_of(self, name: str) -> Tuple[float, float]:
        return tuple(self.ranges[NAMES.index(name)])


# -- program construction -----------------------------------------------------

@dataclass
class RelaxationProgram:
    """A built LP/QP plus the index ranges needed to read it back."""

    program: ConicProgram
    layout: ResponseLayout
    parts: Tuple[str, ...]
    hyper: Optional[Hyperparameters]

    @property
    def phi_variable_count(self) -> int:
        return self.layout.size

    @property
    def n_variables(self) -> int:
        return self.program.n

    @property
    def n_constraints(self) -> int:
        return self.program.b.size + self.program.d.size

    def response(self, x: np.ndarray) -> SystemResponse:
        return SystemResponse.from_vector(x[:self.layout.size], self.layout)


class Relaxation:
    """x0-independent pieces of the relaxation for one model and constraint set.

    Variables are ordered ``[phi | s | a | rho]``: ``phi`` the dense stacked
    response, ``s`` slacks for ``|F_j Phi^w|`` entries, ``a`` slacks for
    ``|Phi^w|`` entries, ``rho`` the epigraph of the row-sum norm of ``Phi^w``.
    Only causal entries get slacks.
    """

    def __init__(self, model: LtvModel, constraints: ConstraintSet, weights: Optional[CostWeights] = None,
                 alpha: float = 0.5, backoff: float = 1e-6):
        if constraints.n != model.n or constraints.m != model.m:
            raise ValueError("constraint and model dimensions differ")
        self.model = model
        self.constraints = constraints
        self.weights = weights
        self.alpha = alpha
        self.backoff = backoff
        T, n, m = model.T, model.n, model.m
        L = self.layout = ResponseLayout(T, n, m)
        aff = build_affine_constraint(model)
        self.E, self.f = aff.E, aff.f
        self.rows = constraints.rows(T)
        self.b = np.array([r.bound for r in self.rows])

        # stacked rows touched by each constraint row
        self._row_idx = []
        for r in self.rows:
            kind = "u" if r.kind == "u" else "x"
            self._row_idx.append(np.array([L.row_of(kind, r.t, i) for i in range(r.coeffs.size)]))

        # s entries: (j, c) for c in the causal part of Phi^w for row j
        s_j, s_c = [], []
        for j, r in enumerate(self.rows):
            for c in range(n, (r.t + 1) * n):
                s_j.append(j)
                s_c.append(c)
        self.s_j, self.s_c = np.array(s_j, dtype=int), np.array(s_c, dtype=int)
        # a entries: (r, c) causal entries of Phi^w
        a_r, a_c = [], []
        for row in range(L.rows):
            for c in range(n, (L.row_block(row) + 1) * n):
                a_r.append(row)
                a_c.append(c)
        self.a_r, self.a_c = np.array(a_r, dtype=int), np.array(a_c, dtype=int)
        self.n_phi, self.n_s, self.n_a = L.size, len(s_j), len(a_r)
        self.off_s = self.n_phi
        self.off_a = self.off_s + self.n_s
        self.off_rho = self.off_a + self.n_a
        self.n_full = self.off_rho + 1

        # G: phi -> entries of F_j Phi^w at the s positions
        gr, gc, gv = [], [], []
        for e, (j, c) in enumerate(zip(self.s_j, self.s_c)):
            for row, coef in zip(self._row_idx[j], self.rows[j].coeffs):
                if coef != 0:
                    gr.append(e)
                    gc.append(L.index(row, c))
                    gv.append(coef)
        self.G = sp.csr_matrix((gv, (gr, gc)), shape=(self.n_s, self.n_phi))
        self.H = sp.csr_matrix((np.ones(self.n_a), (np.arange(self.n_a), L.index(self.a_r, self.a_c))),
                               shape=(self.n_a, self.n_phi))
        # Ssum: per constraint row, sum of its s entries
        self.Ssum = sp.csr_matrix((np.ones(self.n_s), (self.s_j, np.arange(self.n_s))),
                                  shape=(len(self.rows), self.n_s))
        # Asum: per stacked row with slacks, sum of its a entries
        self.a_rows = np.unique(self.a_r)
        pos = {r: i for i, r in enumerate(self.a_rows)}
        self.Asum = sp.csr_matrix((np.ones(self.n_a), ([pos[r] for r in self.a_r], np.arange(self.n_a))),
                                  shape=(len(self.a_rows), self.n_a))
        self.row_scale = self.row_weights(alpha)
        self._fc = None
        self._cache: Dict[str, tuple] = {}

    # -- helpers ----------------------------------------------------------

    def row_weights(self, alpha: float) -> np.ndarray:
        """``eA/alpha`` on state rows, ``eB/(1-alpha)`` on input rows."""
        L = self.layout
        w = np.empty(L.rows)
        w[:L.rows_x] = self.model.eps_A / alpha
        w[L.rows_x:] = self.model.eps_B / (1.0 - alpha)
        return w

    def first_column_rows(self, x0) -> sp.csr_matrix:
        """Per constraint row, the map ``phi -> F_j Phi^0 x0``."""
        x0 = np.asarray(x0, dtype=float).ravel()
        if self._fc is None:
            n = self.layout.n
            rr, cc, ff, kk = [], [], [], []
            for j, (idx, r) in enumerate(zip(self._row_idx, self.rows)):
                for row, coef in zip(idx, r.coeffs):
                    if coef != 0:
                        for k in range(n):
                            rr.append(j)
                            cc.append(self.layout.index(row, k))
                            ff.append(coef)
                            kk.append(k)
            self._fc = tuple(np.array(v) for v in (rr, cc, ff, kk))
        rr, cc, ff, kk = self._fc
        return sp.csr_matrix((ff * x0[kk], (rr, cc)), shape=(len(self.rows), self.n_phi))

    @property
    def uncertain(self) -> bool:
        return self.model.eps > 0

    # -- blocks (each returns (A, b) over the full variable vector) -------

    def _abs_s(self):
        if "abs_s" not in self._cache:
            self._cache["abs_s"] = self._build_abs_s()
        return self._cache["abs_s"]

    def _abs_a(self):
        if "abs_a" not in self._cache:
            self._cache["abs_a"] = self._build_abs_a()
        return self._cache["abs_a"]

    def _build_abs_s(self):
        Z = sp.csr_matrix((self.n_s, self.n_full - self.n_phi - self.n_s))
        I = sp.identity(self.n_s, format="csr")
        top = sp.hstack([self.G, -I, Z])
        bot = sp.hstack([-self.G, -I, Z])
        return sp.vstack([top, bot]), np.zeros(2 * self.n_s)

    def _build_abs_a(self):
        I = sp.identity(self.n_a, format="csr")
        Zs = sp.csr_matrix((self.n_a, self.n_s))
        Zr = sp.csr_matrix((self.n_a, 1))
        top = sp.hstack([self.H, Zs, -I, Zr])
        bot = sp.hstack([-self.H, Zs, -I, Zr])
        return sp.vstack([top, bot]), np.zeros(2 * self.n_a)

    def _pad(self, blocks: Dict[str, sp.spmatrix], nrows: int) -> sp.csr_matrix:
        cols = []
        for key, width in (("phi", self.n_phi), ("s", self.n_s), ("a", self.n_a), ("rho", 1)):
            cols.append(blocks.get(key, sp.csr_matrix((nrows, width))))
        return sp.hstack(cols, format="csr")

    def safety_block(self, x0, tau: float, gamma: float, beta: float):
        coef = geometric_sum(tau, self.model.T) * gamma if self.uncertain else 0.0
        A = self._pad({"phi": self.first_column_rows(x0), "s": coef * self.Ssum}, len(self.rows))
        b = self.b - beta * self.model.sigma_w - self.backoff
        return A, b, coef != 0

    def beta_block(self, beta: float):
        eps = self.model.eps
        nr = len(self.rows)
        rho_col = sp.csr_matrix(np.full((nr, 1), beta * eps))
        A = self._pad({"s": self.Ssum, "rho": rho_col}, nr)
        b = np.full(nr, beta)
        if eps == 0:
            return A, b, False
        # rowsum(a) - rho <= 0
        na = len(self.a_rows)
        A2 = self._pad({"a": self.Asum, "rho": sp.csr_matrix(-np.ones((na, 1)))}, na)
        return sp.vstack([A, A2]), np.concatenate([b, np.zeros(na)]), True

    def tau_block(self, tau: float):
        w = self.row_scale[self.a_rows]
        keep = w > 0
        A = self._pad({"a": sp.diags(w[keep]) @ self.Asum[keep]}, int(keep.sum()))
        return A, np.full(int(keep.sum()), tau)

    def gamma_block(self, x0, gamma: float):
        w = self.row_scale
        keep = w > 0
        M0 = sp.diags(w[keep]) @ first_column_map(self.layout, x0)[keep]
        A = self._pad({"phi": sp.vstack([M0, -M0])}, 2 * int(keep.sum()))
        return A, np.full(2 * int(keep.sum()), gamma)

    # -- assembly ---------------------------------------------------------

    def build(self, x0=None, tau: float = 1.0, gamma: float = 1.0, beta: float = 1.0,
              parts: Sequence[str] = PARTS, objective: bool = True, name: str = "") -> RelaxationProgram:
        parts = tuple(p for p in PARTS if p in parts)
        if x0 is None and ("safety" in parts or "gamma" in parts or objective):
            raise ValueError("x0 is needed for the safety/gamma rows and the objective")
        blocks: List[sp.spmatrix] = []
        rhs: List[np.ndarray] = []
        need_s = need_a = need_rho = False
        if "safety" in parts:
            A, b, uses_s = self.safety_block(x0, tau, gamma, beta)
            blocks.append(A)
            rhs.append(b)
            need_s |= uses_s
        if "beta" in parts:
            A, b, uses_a = self.beta_block(beta)
            blocks.append(A)
            rhs.append(b)
            need_s = True
            need_a |= uses_a
            need_rho |= uses_a
        if "tau" in parts and self.uncertain:
            A, b = self.tau_block(tau)
            if A.shape[0]:
                blocks.append(A)
                rhs.append(b)
                need_a = True
        if "gamma" in parts and self.uncertain:
            A, b = self.gamma_block(x0, gamma)
            if A.shape[0]:
                blocks.append(A)
                rhs.append(b)
        if need_s:
            A, b = self._abs_s()
            blocks.append(A)
            rhs.append(b)
        if need_a:
            A, b = self._abs_a()
            blocks.append(A)
            rhs.append(b)

        # drop slack columns that are not in use
        keep = [np.arange(self.n_phi)]
        if need_s:
            keep.append(np.arange(self.off_s, self.off_s + self.n_s))
        if need_a:
            keep.append(np.arange(self.off_a, self.off_a + self.n_a))
        if need_rho:
            keep.append(np.array([self.off_rho]))
        cols = np.concatenate(keep)
        nv = cols.size
        if blocks:
            Aineq = sp.vstack(blocks, format="csc")[:, cols]
            bineq = np.concatenate(rhs)
        else:
            Aineq, bineq = None, None
        C = sp.hstack([self.E, sp.csr_matrix((self.E.shape[0], nv - self.n_phi))], format="csr")
        P = None
        if objective:
            if self.weights is None:
                raise ValueError("cost weights are needed for the objective")
            cost = assemble_cost(self.weights, x0, self.layout)
            P = sp.block_diag([cost.P, sp.csc_matrix((nv - self.n_phi, nv - self.n_phi))], format="csc")
        prog = ConicProgram(n=nv, P=P, C=C, d=self.f, A=Aineq, b=bineq, name=name or "+".join(parts))
        hyper = Hyperparameters(tau, gamma, beta, self.alpha) if min(tau, gamma, beta) > 0 else None
        return RelaxationProgram(prog, self.layout, parts, hyper)


def build_relaxation(model: LtvModel, constraints: ConstraintSet, x0, hyper: Hyperparameters,
                     weights: Optional[CostWeights] = None, backoff: float = 1e-6) -> RelaxationProgram:
    """The full QP for one hyperparameter tuple (LQR-style weights default to identity)."""
    if weights is None:
        weights = CostWeights.lti(np.eye(model.n), np.eye(model.m), model.T)
    R = Relaxation(model, constraints, weights, alpha=hyper.alpha, backoff=backoff)
    return R.build(x0, hyper.tau, hyper.gamma, hyper.beta)


def relaxation_residuals(relax: Relaxation, x0, hyper: Hyperparameters, resp: SystemResponse) -> Dict[str, float]:
    """Violation of each constraint family at ``resp``, computed from dense norms.

    Independent of the slack encoding; positive values mean violation.
    """
    L = relax.layout
    n = L.n
    Phi = resp.stacked()
    P0, Pw = Phi[:, :n], Phi[:, n:]
    x0 = np.asarray(x0, dtype=float).ravel()
    Fs, _ = relax.constraints.stacked(L.T)
    out = {}
    Id = np.eye(L.cols)
    m = relax.model
    Z = np.zeros_like(Id)
    Z[n:, :-n] = np.eye(L.cols - n)
    Ad = relax.model.stacked_A().to_dense()
    Bd = relax.model.stacked_B().to_dense()
    out["affine"] = float(np.max(np.abs((Id - Z @ Ad) @ Phi[:L.rows_x] - Z @ Bd @ Phi[L.rows_x:] - Id)))
    l1 = np.sum(np.abs(Fs @ Pw), axis=1)
    S = geometric_sum(hyper.tau, L.T) if m.eps > 0 else 0.0
    out["safety"] = float(np.max(Fs @ P0 @ x0 + l1 * S * hyper.gamma + hyper.beta * m.sigma_w - relax.b))
    norm_w = np.max(np.sum(np.abs(Pw), axis=1)) if Pw.size else 0.0
    out["beta"] = float(np.max(l1 + hyper.beta * m.eps * norm_w - hyper.beta))
    w = relax.row_weights(hyper.alpha)
    out["tau"] = float(np.max(w * np.sum(np.abs(Pw), axis=1)) - hyper.tau) if Pw.size else -hyper.tau
    out["gamma"] = float(np.max(np.abs(w * (P0 @ x0))) - hyper.gamma)
    return out


# -- bisection ----------------------------------------------------------------

@dataclass
class Bracket:
    """Outcome of one bisection.

    ``lo``/``hi`` are the final interval ends; ``inner`` is the end on the
    feasible side (what the grid uses), ``outer`` the end on the infeasible
    side (what infeasibility certificates use). ``certified`` is False when
    an inconclusive solve was treated as infeasible.
    """

    name: str
    kind: str  # "lower" or "upper"
    lo: float
    hi: float
    solves: int
    inner_verified: bool
    certified: bool = True
    empty: bool = False  # no feasible value anywhere in the range (verified)
    probes: List[Tuple[float, bool]] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def inner(self) -> float:
        return self.hi if self.kind == "lower" else self.lo

    @property
    def outer(self) -> float:
        if self.empty:
            return math.inf if self.kind == "lower" else -math.inf
        return self.lo if self.kind == "lower" else self.hi


def bisection_steps(lo: float, hi: float, tol: float) -> int:
    return max(0, math.ceil(math.log2((hi - lo) / tol))) if hi > lo else 0


def bisect(feasible, lo: float, hi: float, tol: float, kind: str, name: str = "") -> Bracket:
    """Monotone bisection with exactly ``ceil(log2((hi - lo)/tol))`` feasibility calls.

    ``kind="lower"`` finds the smallest feasible value (feasible above a
    threshold); ``kind="upper"`` the largest (feasible below). ``feasible``
    returns True/False or raises :class:`SolverError` for an inconclusive
    verdict, which counts as infeasible but voids certification.

    Each probe lies strictly inside the bracket left by the earlier ones, so
    the probes never contradict monotonicity on their own; monotonicity of
    the subproblems is checked as a property in the tests instead.
    """
    if kind not in ("lower", "upper"):
        raise ValueError(f"kind must be 'lower' or 'upper', got {kind!r}")
    steps = bisection_steps(lo, hi, tol)
    a, b = lo, hi
    certified = True
    found_inner = False
    probes: List[Tuple[float, bool]] = []
    t0 = time.perf_counter()
    for _ in range(steps):
        mid = 0.5 * (a + b)
        try:
            ok = bool(feasible(mid))
        except SolverError as exc:
            log.warning("bisection on %s: inconclusive solve at %.6g (%s)", name, mid, exc)
            certified, ok = False, False
        probes.append((mid, ok))
        if ok == (kind == "lower"):
            b = mid
        else:
            a = mid
        found_inner |= ok
    br = Bracket(name, kind, a, b, len(probes), found_inner, certified, probes=probes)
    br.wall_time = time.perf_counter() - t0
    return br


@dataclass
class BoundsReport:
    lb_tau: float
    lb_gamma: float
    lb_beta: float
    ub_tau: float
    ub_gamma: float
    ub_beta: float
    eps_tol: float
    infeasible_certificate: Optional[str] = None
    brackets: Dict[str, Bracket] = field(default_factory=dict)
    bracket_checks: int = 0
    wall_time: float = 0.0
    solver_time: float = 0.0

    def lb(self, name: str) -> float:
        return getattr(self, f"lb_{name}")

    def ub(self, name: str) -> float:
        return getattr(self, f"ub_{name}")

    def certified_interval(self, name: str) -> Tuple[float, float]:
        """Interval guaranteed to contain every feasible value (within the search range)."""
        lo = self.brackets[f"lb_{name}"].outer if f"lb_{name}" in self.brackets else self.lb(name)
        hi = self.brackets[f"ub_{name}"].outer if f"ub_{name}" in self.brackets else self.ub(name)
        return lo, hi

    @property
    def solves(self) -> int:
        return sum(b.solves for b in self.brackets.values()) + self.bracket_checks

    def to_dict(self) -> dict:
        return {
            "lb": {k: self.lb(k) for k in NAMES},
            "ub": {k: self.ub(k) for k in NAMES},
            "eps_tol": self.eps_tol,
            "infeasible_certificate": self.infeasible_certificate,
            "solves": {k: b.solves for k, b in self.brackets.items()},
            "bracket_checks": self.bracket_checks,
            "wall_time": self.wall_time,
            "solver_time": self.solver_time,
        }


class _Feasibility:
    """Counts time spent in solver calls for the feasibility subproblems."""

    def __init__(self, relax: Relaxation, cfg: SearchConfig):
        self.relax, self.cfg = relax, cfg
        self.solver_time = 0.0

    def __call__(self, x0, parts, **hyper) -> bool:
        rp = self.relax.build(x0, parts=("affine",) + tuple(parts), objective=False, **hyper)
        res = solve(rp.program, self.cfg.tolerances, self.cfg.backend)
        self.solver_time += res.wall_time
        fb = self.cfg.fallback_backend
        if res.status not in (Status.OPTIMAL, Status.PRIMAL_INFEASIBLE) and fb and fb != self.cfg.backend:
            # interior-point solvers stall near the feasibility boundary; ask a simplex solver
            res = solve(rp.program, self.cfg.tolerances, fb)
            self.solver_time += res.wall_time
        if res.status is Status.OPTIMAL:
            return True
        if res.status is Status.PRIMAL_INFEASIBLE:
            return False
        raise SolverError(f"{rp.program.name}: {res.status.value}")


def _check_endpoint(check, bracket: Bracket, value: float) -> int:
    """Test the untested inner end of a bracket; mark the bracket empty if infeasible."""
    try:
        ok = check(value)
    except SolverError:
        bracket.certified = False
        return 1
    if ok:
        bracket.inner_verified = True
    else:
        bracket.empty = True
    return 1


@dataclass
class OfflineBounds:
    """The x0-independent lower bounds on ``tau`` and ``beta``."""

    lb_tau: Bracket
    lb_beta: Bracket
    checks: int = 0
    solver_time: float = 0.0


def offline_bounds(relax: Relaxation, cfg: SearchConfig) -> OfflineBounds:
    feas = _Feasibility(relax, cfg)
    lo, hi = cfg.range_of("tau")
    br_tau = bisect(lambda v: feas(None, ["tau"], tau=v), lo, hi, cfg.eps_tol, "lower", "lb_tau")
    checks = 0
    if not br_tau.inner_verified:
        checks += _check_endpoint(lambda v: feas(None, ["tau"], tau=v), br_tau, hi)
    lo, hi = cfg.range_of("beta")
    br_beta = bisect(lambda v: feas(None, ["beta"], beta=v), lo, hi, cfg.eps_tol, "lower", "lb_beta")
    if not br_beta.inner_verified:
        checks += _check_endpoint(lambda v: feas(None, ["beta"], beta=v), br_beta, hi)
    return OfflineBounds(br_tau, br_beta, checks, feas.solver_time)


def bisect_bounds(model: LtvModel, constraints: ConstraintSet, x0, cfg: Optional[SearchConfig] = None,
                  relax: Optional[Relaxation] = None, offline: Optional[OfflineBounds] = None) -> BoundsReport:
    """Lower and upper bounds on ``(tau, gamma, beta)`` by bisection.

    Order of the searches:

    1. ``lb(tau)``   from {affine, tau}
    2. ``lb(gamma)`` from {affine, gamma}
    3. ``lb(beta)``  from {affine, beta}
    4. ``ub(beta)``  from {affine, safety} with ``tau, gamma`` at their lower bounds
    5. ``ub(tau)``   from {affine, safety} with ``gamma, beta`` at their lower bounds
    6. ``ub(gamma) = S(ub tau) lb(gamma) / S(lb tau)``

    Steps 4 and 5 plug in the infeasible-side ends of the lower brackets so
    the upper bounds hold for every feasible tuple; a crossed pair of
    certified brackets therefore proves the relaxation infeasible for every
    hyperparameter in the search ranges.
    """
    cfg = cfg or SearchConfig()
    t0 = time.perf_counter()
    relax = relax or Relaxation(model, constraints, None, alpha=cfg.alpha, backoff=cfg.backoff)
    x0 = np.asarray(x0, dtype=float).ravel()
    feas = _Feasibility(relax, cfg)
    tol = cfg.eps_tol
    offline_time = 0.0
    if offline is None:
        offline = offline_bounds(relax, cfg)
        offline_time = offline.solver_time
    checks = offline.checks
    br: Dict[str, Bracket] = {"lb_tau": offline.lb_tau, "lb_beta": offline.lb_beta}

    lo, hi = cfg.range_of("gamma")
    g_check = lambda v: feas(x0, ["gamma"], gamma=v)
    br["lb_gamma"] = bisect(g_check, lo, hi, tol, "lower", "lb_gamma")
    if not br["lb_gamma"].inner_verified:
        checks += _check_endpoint(g_check, br["lb_gamma"], hi)

    # outer (infeasible-side) lower ends, floored away from zero
    tau_lo = max(br["lb_tau"].outer, 0.0)
    gamma_lo = max(br["lb_gamma"].outer, 0.0)
    beta_lo = max(br["lb_beta"].outer, 0.0)

    lo, hi = cfg.range_of("beta")
    b_check = lambda v: feas(x0, ["safety"], tau=tau_lo, gamma=gamma_lo, beta=v)
    br["ub_beta"] = bisect(b_check, lo, hi, tol, "upper", "ub_beta")
    if not br["ub_beta"].inner_verified:
        checks += _check_endpoint(b_check, br["ub_beta"], lo)

    lo, hi = cfg.range_of("tau")
    t_check = lambda v: feas(x0, ["safety"], tau=v, gamma=gamma_lo, beta=beta_lo)
    br["ub_tau"] = bisect(t_check, lo, hi, tol, "upper", "ub_tau")
    if not br["ub_tau"].inner_verified:
        checks += _check_endpoint(t_check, br["ub_tau"], lo)

    lb = {k: br[f"lb_{k}"].inner for k in NAMES}
    ub_tau, ub_beta = br["ub_tau"].inner, br["ub_beta"].inner
    T = model.T
    ub_gamma = geometric_sum(ub_tau, T) * lb["gamma"] / geometric_sum(lb["tau"], T)

    cert = None
    for k in ("tau", "beta"):
        lo_b, hi_b = br[f"lb_{k}"], br[f"ub_{k}"]
        if lo_b.outer > hi_b.outer and lo_b.certified and hi_b.certified:
            cert = f"lb({k}) > ub({k})"
            break
    if cert is None and br["lb_gamma"].empty and br["lb_gamma"].certified:
        cert = "lb(gamma) > ub(gamma)"
    return BoundsReport(lb["tau"], lb["gamma"], lb["beta"], ub_tau, ub_gamma, ub_beta, tol, cert, br, checks,
                        time.perf_counter() - t0, feas.solver_time + offline_time)


def verify_infeasible(bounds: BoundsReport) -> bool:
    """True iff the bounds prove the relaxation infeasible for every hyperparameter.

    Uses the certified brackets when present; for hand-built reports it
    falls back to ``lb > ub + eps_tol``.
    """
    if bounds.infeasible_certificate:
        return True
    if bounds.brackets:
        return False
    return any(bounds.lb(k) > bounds.ub(k) + bounds.eps_tol for k in NAMES)


# -- grid search ----------------------------------------------------------------

class SolutionStatus(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE_CERTIFIED = "infeasible_certified"
    UNVERIFIED = "unverified"


@dataclass
class RobustSolution:
    status: SolutionStatus
    response: Optional[SystemResponse] = None
    hyper: Optional[Hyperparameters] = None
    objective: float = math.nan
    iterations: int = 0
    wall_time: float = 0.0
    solver_time: float = 0.0
    grid_points: int = 0
    program: Optional[RelaxationProgram] = None
    x: Optional[np.ndarray] = None

    @property
    def feasible(self) -> bool:
        return self.status is SolutionStatus.FEASIBLE

    def controller(self) -> BltOperator:
        if self.response is None:
            raise ValueError("no response to realize")
        return realize_controller(self.response)


def hyper_grid(bounds: BoundsReport, dims: Sequence[int], alpha: float = 0.5) -> List[Hyperparameters]:
    """Linear grid over ``[lb, ub]`` per parameter, in lexicographic order."""
    axes = []
    for k, d in zip(NAMES, dims):
        lo, hi = bounds.lb(k), bounds.ub(k)
        vals = np.linspace(lo, hi, d) if d > 1 else np.array([lo])
        axes.append(np.unique(np.maximum(vals, 1e-12)))
    return [Hyperparameters(t, g, b, alpha) for t, g, b in itertools.product(*axes)]


def grid_search_solve(model: LtvModel, constraints: ConstraintSet, x0, bounds: BoundsReport,
                      weights: CostWeights, cfg: Optional[SearchConfig] = None,
                      relax: Optional[Relaxation] = None) -> RobustSolution:
    """Solve the QP at each grid tuple and keep the cheapest feasible one.

    Ties go to the lexicographically smallest ``(tau, gamma, beta)``; with
    ``cfg.first_feasible`` the search stops at the first feasible tuple. If
    no tuple is feasible and ``cfg.refine_dims`` is set, a finer grid over
    the same box is tried before giving up.
    """
    cfg = cfg or SearchConfig()
    if bounds.infeasible_certificate:
        raise ValueError(f"bounds carry an infeasibility certificate ({bounds.infeasible_certificate})")
    relax = relax or Relaxation(model, constraints, weights, alpha=cfg.alpha, backoff=cfg.backoff)
    if relax.weights is None:
        relax.weights = weights
    x0 = np.asarray(x0, dtype=float).ravel()
    t0 = time.perf_counter()
    best = RobustSolution(SolutionStatus.UNVERIFIED)
    solver_time = 0.0
    iters = 0
    grid = hyper_grid(bounds, cfg.grid_dims, cfg.alpha)
    if cfg.refine_dims:
        seen = {h.as_tuple() for h in grid}
        grid.append(None)  # marks the start of the refinement pass
        grid += [h for h in hyper_grid(bounds, cfg.refine_dims, cfg.alpha) if h.as_tuple() not in seen]
    n_solved = 0
    for h in grid:
        if h is None:
            if best.feasible:
                break
            continue
        n_solved += 1
        rp = relax.build(x0, h.tau, h.gamma, h.beta, name=f"relaxation{h.as_tuple()}")
        res = solve(rp.program, cfg.tolerances, cfg.backend)
        solver_time += res.wall_time
        iters += res.iterations
        if res.status is not Status.OPTIMAL:
            continue
        if not best.feasible or res.objective < best.objective - 1e-12 * max(1.0, abs(best.objective)):
            best = RobustSolution(SolutionStatus.FEASIBLE, rp.response(res.x), h, res.objective,
                                  program=rp, x=res.x)
        if cfg.first_feasible:
            break
    best.iterations = iters
    best.solver_time = solver_time
    best.grid_points = n_solved
    best.wall_time = time.perf_counter() - t0
    return best


@dataclass
class StepResult:
    u0: Optional[np.ndarray]
    solution: RobustSolution
    bounds: BoundsReport

    @property
    def status(self) -> SolutionStatus:
        return self.solution.status

    @property
    def timings(self) -> Dict[str, float]:
        return {"bisection": self.bounds.solver_time, "grid": self.solution.solver_time,
                "total": self.bounds.solver_time + self.solution.solver_time}


def mpc_step(model: LtvModel, constraints: ConstraintSet, x0, weights: CostWeights,
             cfg: Optional[SearchConfig] = None, relax: Optional[Relaxation] = None,
             offline: Optional[OfflineBounds] = None) -> StepResult:
    """Bisection, grid search and the first input ``u0 = Phi_u(0,0) x0``."""
    cfg = cfg or SearchConfig()
    relax = relax or Relaxation(model, constraints, weights, alpha=cfg.alpha, backoff=cfg.backoff)
    x0 = np.asarray(x0, dtype=float).ravel()
    bounds = bisect_bounds(model, constraints, x0, cfg, relax, offline)
    if verify_infeasible(bounds):
        return StepResult(None, RobustSolution(SolutionStatus.INFEASIBLE_CERTIFIED), bounds)
    sol = grid_search_solve(model, constraints, x0, bounds, weights, cfg, relax)
    u0 = sol.response.first_action_gain() @ x0 if sol.feasible else None
    return StepResult(u0, sol, bounds)
