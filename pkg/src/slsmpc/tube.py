"""Tube MPC baseline with homothetic polytopic cross-sections.

Cross-section ``t`` is ``z_t + alpha_t Z`` for a fixed shape ``Z``. The
initial state is known exactly and driven by a shared input ``u_0``; later
steps use one input per vertex of the cross-section, and the applied input
interpolates them with barycentric weights. Robust containment of every
uncertain successor is enforced on the vertices of the memoryless
uncertainty balls, with the disturbance handled by support functions.

Decision vector: ``[z_1..z_T | alpha_1..alpha_T | u_0 | u_{t,v}]`` with
``T(1+n) + m + (T-1) m V`` entries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_discrete_are
from scipy.optimize import nnls

from .constraints import ConstraintSet
from .polytope import Polytope, PolytopeError, UncertaintyVertexSet, disturbance_invariant_set
from .sls import CostWeights, LtvModel
from .solver import ConicProgram, Status, Tolerances, solve


@dataclass
class TubeShape:
    """A polytope ``Z = {z : H z <= 1}`` with 0 in its interior."""

    polytope: Polytope
    label: str = "custom"
    truncation: Optional[int] = None

    def __post_init__(self):
        P = self.polytope
        if P.is_empty() or np.any(P.b <= 0):
            raise PolytopeError("tube shape must contain the origin in its interior")
        self.polytope = P.minimal()

    @property
    def H_normalized(self) -> np.ndarray:
        P = self.polytope
        return P.F / P.b[:, None]

    @property
    def vertices(self) -> np.ndarray:
        return self.polytope.vertices

    @property
    def V(self) -> int:
        return len(self.vertices)

    @property
    def H(self) -> int:
        return self.polytope.F.shape[0]

    @classmethod
    def unit(cls, n: int) -> "TubeShape":
        return cls(Polytope.inf_ball(n, 1.0), "Z_unit")


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """Infinite-horizon LQR gain ``K`` with ``u = K x``."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    try:
        P = solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise PolytopeError(f"no stabilizing Riccati solution: {exc}") from exc
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def make_zinv_shape(model: LtvModel, Q, R, truncation_tol: float = 1e-2, include_zero: bool = True) -> TubeShape:
    """Truncated ``sum_i (A + BK)^i W`` for the LQR gain ``K`` of the nominal pair.

    The sum starts at ``i = 0`` by default. Starting at ``i = 1`` gives a
    nearly flat set when ``A + BK`` is close to singular (as for the double
    integrator), and the homothetic tube then cannot absorb model error.
    """
    K = lqr_gain(model.A[0], model.B[0], np.atleast_2d(Q), np.atleast_2d(R))
    Z, N = disturbance_invariant_set(model, K, truncation_tol=truncation_tol, include_zero=include_zero)
    return TubeShape(Z, "Z_inv", truncation=N)


@dataclass
class TubeProgram:
    program: ConicProgram
    model: LtvModel
    shape: TubeShape
    x0: np.ndarray
    n_constraints_raw: int  # before removing repeated containment rows
    offset: float = 0.0  # constant part of the cost

    @property
    def T(self) -> int:
        return self.model.T

    @property
    def n_variables(self) -> int:
        return self.program.n

    @property
    def n_constraints(self) -> int:
        return self.program.b.size

    def unpack(self, x: np.ndarray):
        T, n, m, V = self.T, self.model.n, self.model.m, self.shape.V
        z = x[:T * n].reshape(T, n)
        alpha = x[T * n:T * (n + 1)]
        u0 = x[T * (n + 1):T * (n + 1) + m]
        uv = x[T * (n + 1) + m:].reshape(T - 1, V, m) if T > 1 else np.zeros((0, V, m))
        return z, alpha, u0, uv


def tube_variable_count(T: int, n: int, m: int, V: int) -> int:
    return T * (1 + n) + m + (T - 1) * m * V


def build_tube_program(model: LtvModel, constraints: ConstraintSet, x0, shape: TubeShape,
                       weights: Optional[CostWeights] = None, backoff: float = 1e-6) -> TubeProgram:
    """Tube MPC QP for ``x0`` (LTI nominal dynamics, memoryless uncertainty).

    Every inequality except the x0 check is tightened by ``backoff`` so that
    solver-accuracy errors cannot show up as constraint violations.
    """
    if not model.is_lti:
        raise ValueError("the tube baseline needs LTI nominal dynamics")
    T, n, m = model.T, model.n, model.m
    x0 = np.asarray(x0, dtype=float).ravel()
    A, B = model.A[0], model.B[0]
    HZ = shape.H_normalized
    Zv = shape.vertices
    V = len(Zv)
    nv = tube_variable_count(T, n, m, V)
    iz = lambda t: (t - 1) * n  # z_t, t = 1..T
    ia = lambda t: T * n + (t - 1)  # alpha_t
    iu0 = T * (n + 1)
    iu = lambda t, v: iu0 + m + ((t - 1) * V + v) * m  # u_{t,v}, t = 1..T-1

    pairs = [(A + dA, B + dB) for dA, dB in UncertaintyVertexSet.from_model(model)]
    hW = model.sigma_w * np.sum(np.abs(HZ), axis=1)
    nh = HZ.shape[0]
    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def add(block_cols, block_vals, b):
        # block_vals: (k, len(block_cols)) coefficients for k new rows
        nonlocal r
        k = block_vals.shape[0]
        rr = np.repeat(np.arange(r, r + k), len(block_cols))
        rows.append(rr)
        cols.append(np.tile(block_cols, k))
        vals.append(block_vals.ravel())
        rhs.append(np.broadcast_to(b, (k,)).astype(float))
        r += k

    def add_unique(block_cols, coef, b):
        # uncertainty vertices often produce repeated rows
        key = np.round(np.hstack([coef, b[:, None]]), 12)
        _, idx = np.unique(key, axis=0, return_index=True)
        idx = np.sort(idx)
        add(block_cols, coef[idx], b[idx])

    # robust containment, step 0 -> 1
    c_next = np.concatenate([np.arange(iz(1), iz(1) + n), [ia(1)]])
    coef = np.vstack([np.hstack([HZ @ Bk, -HZ, -np.ones((nh, 1))]) for Ak, Bk in pairs])
    b0 = np.concatenate([-hW - HZ @ (Ak @ x0) for Ak, Bk in pairs])
    add_unique(np.concatenate([np.arange(iu0, iu0 + m), c_next]), coef, b0)
    # robust containment, step t -> t+1 from every vertex of cross-section t
    for t in range(1, T):
        c_next = np.concatenate([np.arange(iz(t + 1), iz(t + 1) + n), [ia(t + 1)]])
        for v in range(V):
            cols_v = np.concatenate([np.arange(iz(t), iz(t) + n), [ia(t)], np.arange(iu(t, v), iu(t, v) + m),
                                     c_next])
            coef = np.vstack([np.hstack([HZ @ Ak, (HZ @ (Ak @ Zv[v]))[:, None], HZ @ Bk, -HZ,
                                         -np.ones((nh, 1))]) for Ak, Bk in pairs])
            add_unique(cols_v, coef, np.tile(-hW, len(pairs)))
    n_contain = r
    # cross-sections inside X (t < T) and X_T (t = T)
    for t in range(1, T + 1):
        F, b = (constraints.F_x, constraints.b_x) if t < T else (constraints.F_T, constraints.b_T)
        cols_t = np.concatenate([np.arange(iz(t), iz(t) + n), [ia(t)]])
        for v in range(V):
            add(cols_t, np.hstack([F, (F @ Zv[v])[:, None]]), b)
    # inputs
    Fu, bu = constraints.F_u, constraints.b_u
    add(np.arange(iu0, iu0 + m), Fu, bu)
    for t in range(1, T):
        for v in range(V):
            add(np.arange(iu(t, v), iu(t, v) + m), Fu, bu)
    # scalings
    for t in range(1, T + 1):
        add(np.array([ia(t)]), -np.ones((1, 1)), 0.0)
    # x0 in X; a violated row becomes the infeasible constraint 0 <= negative
    slack = constraints.b_x - constraints.F_x @ x0
    add(np.array([0]), np.zeros((slack.size, 1)), np.minimum(slack, 0.0))

    Aineq = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, nv))
    bineq = np.concatenate(rhs)
    bineq[:-slack.size] -= backoff
    raw = sum(len(pairs) * nh * (1 if t == 0 else V) for t in range(T)) + r - n_contain

    if weights is None:
        weights = CostWeights.lti(np.eye(n), np.eye(m), T)
    Q, R, QT = weights.Q[0], weights.R[0], weights.QT
    blocks = [Q] * (T - 1) + [QT] + [np.zeros((T, T))] + [R]
    if T > 1:
        Rbar = np.kron(np.ones((V, V)) / V ** 2, R)
        blocks += [Rbar] * (T - 1)
    P = 2.0 * sp.block_diag(blocks, format="csc")
    prog = ConicProgram(n=nv, P=P, A=Aineq, b=bineq, name=f"tube[{shape.label}, T={T}]")
    return TubeProgram(prog, model, shape, x0, raw, offset=float(x0 @ Q @ x0))


@dataclass
class TubeSolution:
    status: str  # "feasible", "infeasible" or "solver_failure"
    u0: Optional[np.ndarray] = None
    centers: Optional[np.ndarray] = None
    scalings: Optional[np.ndarray] = None
    vertex_inputs: Optional[np.ndarray] = None
    objective: float = float("nan")
    wall_time: float = 0.0
    solver_status: Optional[Status] = None
    program: Optional[TubeProgram] = None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def cross_section(self, t: int) -> Polytope:
        """``z_t + alpha_t Z`` as vertices (``t >= 1``)."""
        Zv = self.program.shape.vertices
        return Polytope.from_vertices(self.centers[t - 1] + self.scalings[t - 1] * Zv)

    def policy(self, t: int, x) -> np.ndarray:
        """Input at time ``t`` for state ``x`` (barycentric interpolation of the vertex inputs)."""
        if t == 0:
            return self.u0.copy()
        Zv = self.program.shape.vertices
        lam = barycentric_weights(self.centers[t - 1] + self.scalings[t - 1] * Zv, x)
        return lam @ self.vertex_inputs[t - 1]


def barycentric_weights(V: np.ndarray, x) -> np.ndarray:
    """Nonnegative weights summing to one with ``V' lam ~ x`` (NNLS with a heavy sum row)."""
    V = np.atleast_2d(V)
    x = np.asarray(x, dtype=float).ravel()
    k = V.shape[0]
    if np.ptp(V, axis=0).max(initial=0.0) < 1e-12:
        return np.full(k, 1.0 / k)
    scale = 1e3 * max(1.0, np.abs(V).max())
    M = np.vstack([V.T, scale * np.ones((1, k))])
    lam, _ = nnls(M, np.concatenate([x, [scale]]))
    return lam / lam.sum()


def solve_tube(tp: TubeProgram, tolerances: Optional[Tolerances] = None, backend: str = "clarabel") -> TubeSolution:
    t0 = time.perf_counter()
    res = solve(tp.program, tolerances, backend)
    out = TubeSolution("solver_failure", wall_time=time.perf_counter() - t0, solver_status=res.status, program=tp)
    if res.status is Status.OPTIMAL:
        z, alpha, u0, uv = tp.unpack(res.x)
        out.status = "feasible"
        out.u0, out.centers, out.scalings, out.vertex_inputs = u0, z, np.maximum(alpha, 0.0), uv
        out.objective = res.objective + tp.offset
    elif res.status is Status.PRIMAL_INFEASIBLE:
        out.status = "infeasible"
    return out


def tube_rollout(sol: TubeSolution, A_seq: List[np.ndarray], B_seq: List[np.ndarray], w_seq) -> tuple:
    """Closed loop over the tube horizon with the interpolating policy; returns ``(x, u)``."""
    T = sol.program.T
    x = np.zeros((T + 1, sol.program.model.n))
    u = np.zeros((T, sol.program.model.m))
    x[0] = sol.program.x0
    w = np.asarray(w_seq, dtype=float).reshape(T, -1)
    for t in range(T):
        u[t] = sol.policy(t, x[t])
        x[t + 1] = A_seq[t] @ x[t] + B_seq[t] @ u[t] + w[t]
    return x, u
