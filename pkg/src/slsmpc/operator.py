"""Finite-horizon block-lower-triangular (BLT) operators.

A causal linear operator over a horizon ``T`` acts on stacked signals of
``T + 1`` blocks. Blocks are keyed by ``(row, delay)`` so that the block at
block-row ``i`` and block-column ``j`` is stored under ``(i, i - j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

Key = Tuple[int, int]

COND_LIMIT = 1e12


class CausalityError(ValueError):
    """A block was placed above the block diagonal."""


class SingularBlockError(np.linalg.LinAlgError):
    def __init__(self, row: int, cond: float):
        super().__init__(f"diagonal block at row {row} is singular (cond={cond:.3g})")
        self.row = row
        self.cond = cond


class BltOperator:
    """Immutable block-lower-triangular operator.

    Parameters
    ----------
    blocks : mapping ``(i, k) -> (p, q) array``
        Block at row ``i`` with delay ``k`` (column ``i - k``). Requires
        ``0 <= k <= i <= T``. Missing blocks are zero.
    T : int
        Horizon; the operator has ``T + 1`` block rows and columns.
    p, q : int
        Block shape.
    strictly_causal : bool
        If set, every delay-0 block must be zero.
    """

    __slots__ = ("_blocks", "T", "p", "q")

    def __init__(self, blocks: Mapping[Key, np.ndarray], T: int, p: int, q: int,
                 strictly_causal: bool = False):
        if T < 0 or p < 1 or q < 1:
            raise ValueError("need T >= 0 and positive block sizes")
        store: Dict[Key, np.ndarray] = {}
        for (i, k), blk in blocks.items():
            if not (0 <= i <= T) or k < 0:
                raise CausalityError(f"block index ({i}, {k}) out of range for T={T}")
            if k > i:
                raise CausalityError(f"block ({i}, {k}) lies above the block diagonal")
            arr = np.array(blk, dtype=float)
            if arr.ndim < 2 and arr.size == p * q:
                arr = arr.reshape(p, q)
            if arr.shape != (p, q):
                raise ValueError(f"block ({i}, {k}) has shape {arr.shape}, expected {(p, q)}")
            if strictly_causal and k == 0 and np.any(arr != 0):
                raise CausalityError(f"strictly causal operator has nonzero diagonal block at row {i}")
            if np.any(arr != 0):
                arr.setflags(write=False)
                store[(i, k)] = arr
        self._blocks = store
        self.T = T
        self.p = p
        self.q = q

    # -- construction -----------------------------------------------------

    @classmethod
    def zeros(cls, T: int, p: int, q: int) -> "BltOperator":
        return cls({}, T, p, q)

    @classmethod
    def identity(cls, T: int, n: int) -> "BltOperator":
        return cls({(i, 0): np.eye(n) for i in range(T + 1)}, T, n, n)

    @classmethod
    def block_diag(cls, mats: Iterable[np.ndarray], T: int | None = None) -> "BltOperator":
        """Memoryless operator with the given diagonal blocks (padded with zeros up to ``T``)."""
        mats = [np.atleast_2d(np.asarray(M, dtype=float)) for M in mats]
        if T is None:
            T = len(mats) - 1
        p, q = mats[0].shape
        return cls({(i, 0): M for i, M in enumerate(mats)}, T, p, q)

    @classmethod
    def from_dense(cls, M: np.ndarray, T: int, p: int, q: int, tol: float = 0.0) -> "BltOperator":
        M = np.asarray(M, dtype=float)
        if M.shape != ((T + 1) * p, (T + 1) * q):
            raise ValueError(f"dense matrix has shape {M.shape}")
        blocks = {}
        for i in range(T + 1):
            for j in range(T + 1):
                blk = M[i * p:(i + 1) * p, j * q:(j + 1) * q]
                if np.any(np.abs(blk) > tol):
                    if j > i:
                        raise CausalityError(f"dense matrix has nonzero block ({i}, {j}) above the diagonal")
                    blocks[(i, i - j)] = blk
        return cls(blocks, T, p, q)

    # -- access -----------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, int]:
        return ((self.T + 1) * self.p, (self.T + 1) * self.q)

    @property
    def strictly_causal(self) -> bool:
        return all(k > 0 for (_, k) in self._blocks)

    def keys(self):
        return self._blocks.keys()

    def get(self, i: int, k: int) -> np.ndarray:
        """Block at row ``i`` and delay ``k`` (zero if absent)."""
        blk = self._blocks.get((i, k))
        return np.zeros((self.p, self.q)) if blk is None else blk

    def block(self, i: int, j: int) -> np.ndarray:
        """Block at row ``i`` and column ``j``."""
        if j > i:
            return np.zeros((self.p, self.q))
        return self.get(i, i - j)

    def to_dense(self) -> np.ndarray:
        M = np.zeros(self.shape)
        p, q = self.p, self.q
        for (i, k), blk in self._blocks.items():
            j = i - k
            M[i * p:(i + 1) * p, j * q:(j + 1) * q] = blk
        return M

    def is_zero(self) -> bool:
        return not self._blocks

    # -- arithmetic -------------------------------------------------------

    def _check_same(self, other: "BltOperator"):
        if (self.T, self.p, self.q) != (other.T, other.p, other.q):
            raise ValueError("operators differ in horizon or block shape")

    def __add__(self, other: "BltOperator") -> "BltOperator":
        self._check_same(other)
        out = dict(self._blocks)
        for key, blk in other._blocks.items():
            out[key] = out[key] + blk if key in out else blk
        return BltOperator(out, self.T, self.p, self.q)

    def __neg__(self) -> "BltOperator":
        return BltOperator({k: -b for k, b in self._blocks.items()}, self.T, self.p, self.q)

    def __sub__(self, other: "BltOperator") -> "BltOperator":
        return self + (-other)

    def __mul__(self, c: float) -> "BltOperator":
        return BltOperator({k: c * b for k, b in self._blocks.items()}, self.T, self.p, self.q)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, BltOperator):
            return multiply(self, other)
        return self.to_dense() @ np.asarray(other, dtype=float)

    def __pow__(self, k: int) -> "BltOperator":
        if self.p != self.q:
            raise ValueError("power needs square blocks")
        out = BltOperator.identity(self.T, self.p)
        for _ in range(k):
            out = out @ self
        return out

    def __repr__(self):
        return f"BltOperator(T={self.T}, p={self.p}, q={self.q}, nblocks={len(self._blocks)})"


def blt_from_blocks(blocks: Mapping[Key, np.ndarray], T: int, p: int, q: int) -> BltOperator:
    return BltOperator(blocks, T, p, q)


def downshift(T: int, n: int) -> BltOperator:
    """Block-downshift: identity on the first block subdiagonal."""
    if T < 1 or n < 1:
        raise ValueError("need T >= 1 and n >= 1")
    return BltOperator({(i, 1): np.eye(n) for i in range(1, T + 1)}, T, n, n)


def multiply(A: BltOperator, B: BltOperator) -> BltOperator:
    if A.T != B.T:
        raise ValueError("horizon mismatch")
    if A.q != B.p:
        raise ValueError(f"inner block dimensions differ ({A.q} vs {B.p})")
    T = A.T
    out: Dict[Key, np.ndarray] = {}
    # C(i, ka + kb) += A(i, ka) B(i - ka, kb)
    for (i, ka), a in A._blocks.items():
        l = i - ka
        for kb in range(l + 1):
            b = B._blocks.get((l, kb))
            if b is None:
                continue
            key = (i, ka + kb)
            prod = a @ b
            out[key] = out[key] + prod if key in out else prod
    return BltOperator(out, T, A.p, B.q)


def inverse(A: BltOperator) -> BltOperator:
    """Inverse by block forward substitution."""
    if A.p != A.q:
        raise ValueError("inverse needs square blocks")
    T, n = A.T, A.p
    diag_inv = []
    for i in range(T + 1):
        D = A.get(i, 0)
        cond = np.linalg.cond(D)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularBlockError(i, cond)
        diag_inv.append(np.linalg.inv(D))
    X: Dict[Key, np.ndarray] = {}
    for j in range(T + 1):
        X[(j, 0)] = diag_inv[j]
        for i in range(j + 1, T + 1):
            acc = np.zeros((n, n))
            for l in range(j, i):
                a = A._blocks.get((i, i - l))
                x = X.get((l, l - j))
                if a is not None and x is not None:
                    acc += a @ x
            if np.any(acc != 0):
                X[(i, i - j)] = -diag_inv[i] @ acc
    return BltOperator(X, T, n, n)


def induced_inf_norm(A) -> float:
    """Maximum absolute row sum of the dense realization."""
    M = A.to_dense() if isinstance(A, BltOperator) else np.atleast_2d(np.asarray(A, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(M), axis=1)))


@dataclass(frozen=True)
class ColumnPartition:
    """First block column and the remaining block columns of an operator."""

    first: np.ndarray
    rest: np.ndarray

    def reassemble(self) -> np.ndarray:
        return np.hstack([self.first, self.rest])


def split_columns(A, n: int) -> ColumnPartition:
    M = A.to_dense() if isinstance(A, BltOperator) else np.asarray(A, dtype=float)
    if isinstance(A, BltOperator) and A.q != n:
        raise ValueError(f"block_cols is {A.q}, expected {n}")
    return ColumnPartition(M[:, :n].copy(), M[:, n:].copy())
