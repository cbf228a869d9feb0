"""Finite-horizon system level synthesis for LTV state feedback.

The stacked disturbance is ``w = [x0; w_0; ...; w_{T-1}]`` and the system
responses map it to ``x = Phi_x w`` and ``u = Phi_u w``. A pair of BLT
operators is achievable for the nominal model iff

    [I - Z A, -Z B] [Phi_x; Phi_u] = I.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .operator import BltOperator, downshift, inverse

MEMORYLESS = "memoryless"
FULL_LTV = "full_ltv"


def _mat(M, shape=None) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if shape is not None and M.shape != shape:
        M = M.reshape(shape)
    return M


@dataclass
class LtvModel:
    """Nominal LTV dynamics with uncertainty and disturbance bounds."""

    A: List[np.ndarray]
    B: List[np.ndarray]
    eps_A: float = 0.0
    eps_B: float = 0.0
    sigma_w: float = 0.0
    structure: str = MEMORYLESS

    def __post_init__(self):
        if len(self.A) != len(self.B) or not self.A:
            raise ValueError("need the same nonzero number of A and B matrices")
        self.A = [_mat(a) for a in self.A]
        n = self.A[0].shape[0]
        self.B = [_mat(b).reshape(n, -1) for b in self.B]
        m = self.B[0].shape[1]
        for a, b in zip(self.A, self.B):
            if a.shape != (n, n) or b.shape != (n, m):
                raise ValueError("inconsistent dimensions across time steps")
        if min(self.eps_A, self.eps_B, self.sigma_w) < 0:
            raise ValueError("uncertainty bounds must be nonnegative")
        if self.structure not in (MEMORYLESS, FULL_LTV):
            raise ValueError(f"unknown uncertainty structure {self.structure!r}")

    @classmethod
    def lti(cls, A, B, T: int, **kw) -> "LtvModel":
        A = _mat(A)
        B = _mat(B).reshape(A.shape[0], -1)
        return cls([A] * T, [B] * T, **kw)

    @property
    def T(self) -> int:
        return len(self.A)

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def eps(self) -> float:
        return self.eps_A + self.eps_B

    @property
    def is_lti(self) -> bool:
        return all(np.array_equal(a, self.A[0]) for a in self.A) and all(np.array_equal(b, self.B[0]) for b in self.B)

    def with_horizon(self, T: int) -> "LtvModel":
        if not self.is_lti:
            raise ValueError("only LTI models can be re-horizoned")
        return LtvModel.lti(self.A[0], self.B[0], T, eps_A=self.eps_A, eps_B=self.eps_B,
                            sigma_w=self.sigma_w, structure=self.structure)

    def stacked_A(self) -> BltOperator:
        """``blkdiag(A_0, ..., A_{T-1}, 0)``."""
        return BltOperator.block_diag(self.A + [np.zeros((self.n, self.n))])

    def stacked_B(self) -> BltOperator:
        return BltOperator.block_diag(self.B + [np.zeros((self.n, self.m))])


@dataclass
class CostWeights:
    Q: List[np.ndarray]
    R: List[np.ndarray]
    QT: np.ndarray

    def __post_init__(self):
        self.Q = [_mat(q) for q in self.Q]
        self.R = [_mat(r) for r in self.R]
        self.QT = _mat(self.QT)
        if len(self.Q) != len(self.R):
            raise ValueError("Q and R need one weight per step")
        for M in self.Q + [self.QT]:
            _check_psd(M, strict=False)
        for M in self.R:
            _check_psd(M, strict=True)

    @classmethod
    def lti(cls, Q, R, T: int, QT=None) -> "CostWeights":
        return cls([Q] * T, [R] * T, Q if QT is None else QT)

    @property
    def T(self) -> int:
        return len(self.Q)


def _check_psd(M: np.ndarray, strict: bool, floor: float = -1e-10):
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
        raise ValueError("weight matrices must be square and symmetric")
    lo = float(np.linalg.eigvalsh(M).min())
    if lo < floor or (strict and lo <= 0):
        raise ValueError(f"weight matrix not {'positive' if strict else 'semi'}definite (min eig {lo:.3g})")


@dataclass(frozen=True)
class ResponseLayout:
    """Index map for the dense stacked response ``[Phi_x; Phi_u]`` (row-major).

    The vector has ``(T+1)^2 n (n+m)`` entries; ``Phi_x`` rows come first.
    """

    T: int
    n: int
    m: int

    @property
    def rows_x(self) -> int:
        return (self.T + 1) * self.n

    @property
    def rows(self) -> int:
        return (self.T + 1) * (self.n + self.m)

    @property
    def cols(self) -> int:
        return (self.T + 1) * self.n

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def row_of(self, kind: str, t: int, i: int = 0) -> int:
        """Stacked row index of component ``i`` of ``x_t`` or ``u_t``."""
        if kind == "x":
            return t * self.n + i
        return self.rows_x + t * self.m + i

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def row_block(self, row: int) -> int:
        """Time index of a stacked row."""
        if row < self.rows_x:
            return row // self.n
        return (row - self.rows_x) // self.m

    def causal_cols(self, row: int) -> range:
        """Columns that may be nonzero in ``row`` (block columns 0..t)."""
        return range(0, (self.row_block(row) + 1) * self.n)

    def unpack(self, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        M = np.asarray(phi, dtype=float).reshape(self.rows, self.cols)
        return M[:self.rows_x], M[self.rows_x:]


@dataclass
class SystemResponse:
    Phi_x: BltOperator
    Phi_u: BltOperator

    @classmethod
    def from_dense(cls, Px: np.ndarray, Pu: np.ndarray, T: int, n: int, m: int, tol: float = 0.0):
        return cls(BltOperator.from_dense(Px, T, n, n, tol), BltOperator.from_dense(Pu, T, m, n, tol))

    @classmethod
    def from_vector(cls, phi: np.ndarray, layout: ResponseLayout, tol: float = 1e-12):
        Px, Pu = layout.unpack(phi)
        # solver noise above the diagonal is dropped, not propagated
        n, m, T = layout.n, layout.m, layout.T
        Px = np.where(_causal_mask(T, n, n), Px, 0.0)
        Pu = np.where(_causal_mask(T, m, n), Pu, 0.0)
        return cls.from_dense(Px, Pu, T, n, m, tol)

    @property
    def T(self) -> int:
        return self.Phi_x.T

    def stacked(self) -> np.ndarray:
        return np.vstack([self.Phi_x.to_dense(), self.Phi_u.to_dense()])

    def first_action_gain(self) -> np.ndarray:
        """``Phi_u(0, 0)``; the first input is this times ``x0``."""
        return self.Phi_u.get(0, 0)


def _causal_mask(T: int, p: int, q: int) -> np.ndarray:
    rows = np.arange((T + 1) * p) // p
    cols = np.arange((T + 1) * q) // q
    return rows[:, None] >= cols[None, :]


@dataclass
class AffineConstraint:
    """Sparse equality system ``E phi = f`` over the stacked response vector."""

    E: sp.csr_matrix
    f: np.ndarray
    layout: ResponseLayout

    def residual(self, phi: np.ndarray) -> float:
        return float(np.max(np.abs(self.E @ phi - self.f)))


def build_affine_constraint(model: LtvModel, fix_terminal_input: bool = True,
                            enforce_causality: bool = True) -> AffineConstraint:
    """Rows of ``[I - ZA, -ZB] Phi = I`` plus causality of ``Phi_u``.

    ``Phi_x`` causality follows from the affine rows once ``Phi_u`` is
    causal, so only ``Phi_u`` gets explicit zero rows (extra rows would make
    the system rank deficient). With ``fix_terminal_input`` the block row of
    ``u_T`` is pinned to zero; it enters neither the cost nor the constraints.
    """
    T, n, m = model.T, model.n, model.m
    L = ResponseLayout(T, n, m)
    cols = L.cols
    rows_i, cols_i, vals = [], [], []
    rhs = []
    r = 0
    for t in range(T + 1):
        for i in range(n):
            row_x = L.row_of("x", t, i)
            for c in range(cols):
                rows_i.append(r)
                cols_i.append(L.index(row_x, c))
                vals.append(1.0)
                if t >= 1:
                    A, B = model.A[t - 1], model.B[t - 1]
                    for k in range(n):
                        if A[i, k] != 0:
                            rows_i.append(r)
                            cols_i.append(L.index(L.row_of("x", t - 1, k), c))
                            vals.append(-A[i, k])
                    for k in range(m):
                        if B[i, k] != 0:
                            rows_i.append(r)
                            cols_i.append(L.index(L.row_of("u", t - 1, k), c))
                            vals.append(-B[i, k])
                rhs.append(1.0 if c == t * n + i else 0.0)
                r += 1
    if enforce_causality or fix_terminal_input:
        for t in range(T + 1):
            for i in range(m):
                row_u = L.row_of("u", t, i)
                for c in range(cols):
                    noncausal = c >= (t + 1) * n
                    if (enforce_causality and noncausal) or (fix_terminal_input and t == T):
                        rows_i.append(r)
                        cols_i.append(L.index(row_u, c))
                        vals.append(1.0)
                        rhs.append(0.0)
                        r += 1
    E = sp.csr_matrix((vals, (rows_i, cols_i)), shape=(r, L.size))
    return AffineConstraint(E, np.array(rhs), L)


def affine_residual(model: LtvModel, resp: SystemResponse) -> float:
    """Max-abs residual of ``[I - ZA, -ZB][Phi_x; Phi_u] - I``."""
    T, n = model.T, model.n
    Z = downshift(T, n)
    lhs = resp.Phi_x - Z @ (model.stacked_A() @ resp.Phi_x) - Z @ (model.stacked_B() @ resp.Phi_u)
    return float(np.max(np.abs(lhs.to_dense() - np.eye((T + 1) * n))))


def response_from_inputs(model: LtvModel, Phi_u: BltOperator) -> SystemResponse:
    """The unique ``Phi_x`` making ``(Phi_x, Phi_u)`` achievable."""
    T, n = model.T, model.n
    Pu = Phi_u.to_dense()
    m = model.m
    Px = np.zeros(((T + 1) * n, (T + 1) * n))
    Px[:n, :n] = np.eye(n)
    for t in range(1, T + 1):
        Px[t * n:(t + 1) * n] = (model.A[t - 1] @ Px[(t - 1) * n:t * n]
                                 + model.B[t - 1] @ Pu[(t - 1) * m:t * m])
        Px[t * n:(t + 1) * n, t * n:(t + 1) * n] += np.eye(n)
    return SystemResponse(BltOperator.from_dense(Px, T, n, n), Phi_u)


def realize_controller(resp: SystemResponse) -> BltOperator:
    """``K = Phi_u Phi_x^{-1}``."""
    return resp.Phi_u @ inverse(resp.Phi_x)


def simulate_closed_loop(K: BltOperator, A_seq: Sequence[np.ndarray], B_seq: Sequence[np.ndarray],
                         x0, w_seq, delta_A: Optional[BltOperator] = None,
                         delta_B: Optional[BltOperator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Roll out ``u_t = sum_i K(t, t-i) x_i`` on the given dynamics.

    ``A_seq``/``B_seq`` are the per-step matrices actually applied (nominal
    plus any memoryless perturbation). ``delta_A``/``delta_B`` add
    perturbations with memory: ``x_{t+1} += sum_i dA(t, t-i) x_i + dB(t, t-i) u_i``.
    Returns ``x`` of shape ``(T+1, n)`` and ``u`` of shape ``(T+1, m)``.
    """
    T = K.T
    x0 = np.asarray(x0, dtype=float).ravel()
    n, m = x0.size, K.p
    w = np.asarray(w_seq, dtype=float).reshape(T, n)
    x = np.zeros((T + 1, n))
    u = np.zeros((T + 1, m))
    x[0] = x0
    for t in range(T + 1):
        u[t] = sum((K.get(t, t - i) @ x[i] for i in range(t + 1)), np.zeros(m))
        if t == T:
            break
        nxt = A_seq[t] @ x[t] + B_seq[t] @ u[t] + w[t]
        if delta_A is not None:
            nxt += sum((delta_A.get(t, t - i) @ x[i] for i in range(t + 1)), np.zeros(n))
        if delta_B is not None:
            nxt += sum((delta_B.get(t, t - i) @ u[i] for i in range(t + 1)), np.zeros(n))
        x[t + 1] = nxt
    return x, u


def stacked_delta(delta_A: BltOperator, delta_B: BltOperator) -> np.ndarray:
    """Dense ``Z [dA, dB]``."""
    Z = downshift(delta_A.T, delta_A.p).to_dense()
    return Z @ np.hstack([delta_A.to_dense(), delta_B.to_dense()])


def perturbed_response(resp: SystemResponse, delta_A: BltOperator, delta_B: BltOperator, w) -> np.ndarray:
    """``Phi (I - Delta Phi)^{-1} w``, stacked ``[x; u]``."""
    Phi = resp.stacked()
    D = stacked_delta(delta_A, delta_B)
    w = np.asarray(w, dtype=float).ravel()
    return Phi @ np.linalg.solve(np.eye(D.shape[0]) - D @ Phi, w)


def woodbury_response(resp: SystemResponse, delta_A: BltOperator, delta_B: BltOperator, w) -> np.ndarray:
    """``(Phi + Phi Delta (I - Phi Delta)^{-1} Phi) w``."""
    Phi = resp.stacked()
    D = stacked_delta(delta_A, delta_B)
    w = np.asarray(w, dtype=float).ravel()
    PD = Phi @ D
    return Phi @ w + PD @ np.linalg.solve(np.eye(PD.shape[0]) - PD, Phi @ w)


def validate_robust_response(resp: SystemResponse, delta_A: BltOperator, delta_B: BltOperator, w) -> float:
    """Max deviation between the two closed forms of the perturbed response."""
    return float(np.max(np.abs(perturbed_response(resp, delta_A, delta_B, w)
                               - woodbury_response(resp, delta_A, delta_B, w))))


@dataclass
class QuadraticCost:
    """``J(phi) = ||W^(1/2) M phi||^2`` with ``M phi = [Phi_x(:,0); Phi_u(:,0)] x0``."""

    M: sp.csr_matrix
    W: sp.csr_matrix
    layout: ResponseLayout
    P: sp.csc_matrix = field(init=False)

    def __post_init__(self):
        self.P = sp.csc_matrix(2.0 * (self.M.T @ self.W @ self.M))

    def value(self, phi: np.ndarray) -> float:
        y = self.M @ phi
        return float(y @ (self.W @ y))


def first_column_map(layout: ResponseLayout, x0) -> sp.csr_matrix:
    """Sparse map ``phi -> Phi(:, 0:n) x0`` over all stacked rows."""
    x0 = np.asarray(x0, dtype=float).ravel()
    rows, cols, vals = [], [], []
    for r in range(layout.rows):
        for k in range(layout.n):
            if x0[k] != 0:
                rows.append(r)
                cols.append(layout.index(r, k))
                vals.append(x0[k])
    return sp.csr_matrix((vals, (rows, cols)), shape=(layout.rows, layout.size))


def assemble_cost(weights: CostWeights, x0, layout: ResponseLayout) -> QuadraticCost:
    T = layout.T
    if weights.T != T:
        raise ValueError("weights horizon differs from layout horizon")
    blocks = list(weights.Q) + [weights.QT] + list(weights.R) + [np.zeros((layout.m, layout.m))]
    W = sp.block_diag(blocks, format="csr")
    return QuadraticCost(first_column_map(layout, x0), W, layout)


def nominal_cost(weights: CostWeights, x: np.ndarray, u: np.ndarray) -> float:
    """``sum_t x_t'Q_t x_t + u_t'R_t u_t + x_T'Q_T x_T`` for ``t < T``."""
    T = weights.T
    J = sum(x[t] @ weights.Q[t] @ x[t] + u[t] @ weights.R[t] @ u[t] for t in range(T))
    return float(J + x[T] @ weights.QT @ x[T])
