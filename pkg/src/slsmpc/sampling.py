"""Random admissible model errors and disturbances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .operator import BltOperator
from .sls import LtvModel

MODES = ("vertices", "interior", "mixed")
STRUCTURES = ("constant", "memoryless", "full_ltv")


def _l1_row(cols: int, radius: float, rng: np.random.Generator, vertex: bool) -> np.ndarray:
    """A row with ``||row||_1 = radius`` (vertex) or ``<= radius`` (interior)."""
    r = np.zeros(cols)
    if radius == 0:
        return r
    if vertex:
        r[rng.integers(cols)] = radius * rng.choice([-1.0, 1.0])
        return r
    d = rng.dirichlet(np.ones(cols)) * rng.choice([-1.0, 1.0], size=cols)
    return radius * rng.uniform() * d


def sample_ball_matrix(rows: int, cols: int, eps: float, rng: np.random.Generator, vertex: bool) -> np.ndarray:
    """Matrix with induced inf-norm ``<= eps``; with ``vertex`` an extreme point of the ball."""
    return np.array([_l1_row(cols, eps, rng, vertex) for _ in range(rows)]).reshape(rows, cols)


@dataclass
class UncertaintySample:
    """One admissible realization over ``T`` steps.

    ``dA``/``dB`` are per-step memoryless errors (zero for ``full_ltv``);
    ``op_A``/``op_B`` are causal operators with memory (``full_ltv`` only).
    """

    dA: List[np.ndarray]
    dB: List[np.ndarray]
    w: np.ndarray
    mode: str
    structure: str
    op_A: Optional[BltOperator] = None
    op_B: Optional[BltOperator] = None

    def dynamics(self, model: LtvModel):
        """Per-step ``(A + dA, B + dB)`` lists."""
        A = [model.A[t] + self.dA[t] for t in range(len(self.dA))]
        B = [model.B[t] + self.dB[t] for t in range(len(self.dB))]
        return A, B


def _is_vertex(mode: str, rng: np.random.Generator) -> bool:
    if mode == "vertices":
        return True
    if mode == "interior":
        return False
    return bool(rng.integers(2))


def sample_disturbance(n: int, T: int, sigma_w: float, rng: np.random.Generator, vertex: bool = False) -> np.ndarray:
    if sigma_w == 0:
        return np.zeros((T, n))
    if vertex:
        return sigma_w * rng.choice([-1.0, 1.0], size=(T, n))
    return rng.uniform(-sigma_w, sigma_w, size=(T, n))


def sample_uncertainty(model: LtvModel, mode: str, rng: np.random.Generator, T: Optional[int] = None,
                       structure: str = "memoryless") -> UncertaintySample:
    """Draw ``(dA, dB, w)`` inside the model's uncertainty and disturbance bounds.

    ``structure`` is ``constant`` (one matrix pair for all steps),
    ``memoryless`` (a fresh pair per step) or ``full_ltv`` (causal operators
    with memory, each stacked row within the l1 radius).
    """
    if mode not in MODES:
        raise ValueError(f"unknown sampling mode {mode!r}; have {MODES}")
    if structure not in STRUCTURES:
        raise ValueError(f"unknown uncertainty structure {structure!r}; have {STRUCTURES}")
    T = model.T if T is None else T
    n, m = model.n, model.m
    vertex = _is_vertex(mode, rng)
    w = sample_disturbance(n, T, model.sigma_w, rng, vertex)
    if structure == "full_ltv":
        op_A = _sample_operator(T, n, n, model.eps_A, rng, vertex)
        op_B = _sample_operator(T, n, m, model.eps_B, rng, vertex)
        zeros = ([np.zeros((n, n))] * T, [np.zeros((n, m))] * T)
        return UncertaintySample(zeros[0], zeros[1], w, mode, structure, op_A, op_B)
    if structure == "constant":
        a = sample_ball_matrix(n, n, model.eps_A, rng, vertex)
        b = sample_ball_matrix(n, m, model.eps_B, rng, vertex)
        return UncertaintySample([a] * T, [b] * T, w, mode, structure)
    dA = [sample_ball_matrix(n, n, model.eps_A, rng, vertex) for _ in range(T)]
    dB = [sample_ball_matrix(n, m, model.eps_B, rng, vertex) for _ in range(T)]
    return UncertaintySample(dA, dB, w, mode, structure)


def _sample_operator(T: int, p: int, q: int, eps: float, rng: np.random.Generator, vertex: bool) -> BltOperator:
    """Causal operator over ``T`` steps; row ``t`` touches inputs ``0..t``."""
    blocks = {}
    for t in range(T):
        M = sample_ball_matrix(p, (t + 1) * q, eps, rng, vertex)
        for k in range(t + 1):
            # columns k*q.. hold input time k, i.e. delay t - k
            blk = M[:, k * q:(k + 1) * q]
            if np.any(blk):
                blocks[(t, t - k)] = blk
    return BltOperator(blocks, T, p, q)


def induced_norm(M: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(np.atleast_2d(M)), axis=1)))
