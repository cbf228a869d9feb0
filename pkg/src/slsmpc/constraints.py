"""Polytopic state, input and terminal constraints and their stacked form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .polytope import Polytope


@dataclass
class ConstraintRow:
    kind: str  # "x", "xT" or "u"
    t: int
    coeffs: np.ndarray
    bound: float


@dataclass
class ConstraintSet:
    """``F_x x <= b_x``, ``F_u u <= b_u`` and ``F_T x_T <= b_T``."""

    F_x: np.ndarray
    b_x: np.ndarray
    F_u: np.ndarray
    b_u: np.ndarray
    F_T: np.ndarray
    b_T: np.ndarray

    def __post_init__(self):
        for name in ("F_x", "F_u", "F_T"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("b_x", "b_u", "b_T"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.F_x.shape[0] != self.b_x.size or self.F_u.shape[0] != self.b_u.size \
                or self.F_T.shape[0] != self.b_T.size:
            raise ValueError("constraint rows and bounds differ in length")
        if self.F_T.shape[1] != self.F_x.shape[1]:
            raise ValueError("terminal and state constraints differ in dimension")

    @classmethod
    def from_polytopes(cls, X: Polytope, U: Polytope, XT: Polytope) -> "ConstraintSet":
        return cls(X.F, X.b, U.F, U.b, XT.F, XT.b)

    @property
    def n(self) -> int:
        return self.F_x.shape[1]

    @property
    def m(self) -> int:
        return self.F_u.shape[1]

    @property
    def X(self) -> Polytope:
        return Polytope(self.F_x, self.b_x)

    @property
    def U(self) -> Polytope:
        return Polytope(self.F_u, self.b_u)

    @property
    def XT(self) -> Polytope:
        return Polytope(self.F_T, self.b_T)

    def with_terminal(self, XT: Polytope) -> "ConstraintSet":
        return ConstraintSet(self.F_x, self.b_x, self.F_u, self.b_u, XT.F, XT.b)

    def rows(self, T: int) -> List[ConstraintRow]:
        """Rows of the stacked constraint: ``x_0..x_{T-1}`` in X, ``x_T`` in X_T, ``u_0..u_{T-1}`` in U.

        ``u_T`` is left unconstrained; it never acts on the plant.
        """
        out = []
        for t in range(T):
            out += [ConstraintRow("x", t, f, bj) for f, bj in zip(self.F_x, self.b_x)]
        out += [ConstraintRow("xT", T, f, bj) for f, bj in zip(self.F_T, self.b_T)]
        for t in range(T):
            out += [ConstraintRow("u", t, f, bj) for f, bj in zip(self.F_u, self.b_u)]
        return out

    def margins(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """``b - F [x; u]`` for a trajectory (``x`` has ``T+1`` rows, ``u`` at least ``T``)."""
        T = x.shape[0] - 1
        return np.array([r.bound - r.coeffs @ (u[r.t] if r.kind == "u" else x[r.t]) for r in self.rows(T)])

    def stacked(self, T: int) -> Tuple[np.ndarray, np.ndarray]:
        """Dense ``(F, b)`` acting on ``[x_0..x_T; u_0..u_T]``."""
        n, m = self.n, self.m
        rows = self.rows(T)
        F = np.zeros((len(rows), (T + 1) * (n + m)))
        for j, r in enumerate(rows):
            if r.kind == "u":
                off = (T + 1) * n + r.t * m
                F[j, off:off + m] = r.coeffs
            else:
                F[j, r.t * n:(r.t + 1) * n] = r.coeffs
        return F, np.array([r.bound for r in rows])
