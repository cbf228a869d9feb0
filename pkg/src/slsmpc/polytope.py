"""Convex polytopes in low dimension (n <= 3) and the set recursions built on them.

Vertex enumeration and convex hulls go through qhull (``scipy.spatial``);
Chebyshev centers and redundancy checks use HiGHS through ``scipy.optimize``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

log = logging.getLogger(__name__)

VERTEX_TOL = 1e-9


class PolytopeError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


def _normalize(F: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(F, axis=1)
    keep = norms > 1e-12
    if np.any(~keep & (b < -1e-12)):
        # 0'x <= negative: infeasible row, keep it so emptiness is detected
        return F, b
    F, b, norms = F[keep], b[keep], norms[keep]
    return F / norms[:, None], b / norms


def _dedupe(F: np.ndarray, b: np.ndarray, decimals: int = 10):
    if len(b) == 0:
        return F, b
    key = np.round(np.hstack([F, b[:, None]]), decimals)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    return F[idx], b[idx]


def chebyshev_center(F: np.ndarray, b: np.ndarray) -> Tuple[Optional[np.ndarray], float]:
    """Center and radius of the largest inscribed ball; ``(None, -inf)`` if empty."""
    n = F.shape[1]
    norms = np.linalg.norm(F, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A = np.hstack([F, norms[:, None]])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status == 2:
        return None, -np.inf
    if res.status == 3:
        raise PolytopeError("polytope is unbounded")
    if res.status != 0:
        raise PolytopeError(f"Chebyshev LP failed: {res.message}")
    return res.x[:n], float(res.x[-1])


def _brute_vertices(F: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Vertices by solving every n-subset of active constraints (small degenerate cases)."""
    n = F.shape[1]
    pts = []
    for rows in itertools.combinations(range(len(b)), n):
        M = F[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, b[list(rows)])
        if np.all(F @ v <= b + tol):
            pts.append(v)
    if not pts:
        return np.zeros((0, n))
    pts = np.round(np.array(pts), 10)
    return np.unique(pts, axis=0)


def _hull_hrep(V: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimal H-rep and extreme points of conv(V). Handles degenerate hulls."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n = V.shape[1]
    V = np.unique(np.round(V, 12), axis=0)
    if n == 1:
        lo, hi = V.min(), V.max()
        verts = np.array([[lo]]) if hi - lo < VERTEX_TOL else np.array([[lo], [hi]])
        return np.array([[1.0], [-1.0]]), np.array([hi, -lo]), verts
    spread = V - V.mean(axis=0)
    rank = np.linalg.matrix_rank(spread, tol=1e-9) if len(V) > 1 else 0
    if rank == n:
        hull = ConvexHull(V)
        eq = hull.equations
        F, b = eq[:, :-1], -eq[:, -1]
        F, b = _normalize(F, b)
        F, b = _dedupe(F, b, decimals=9)
        return F, b, V[np.sort(hull.vertices)]
    # lower-dimensional: bounding constraints in the affine hull plus equalities
    c = V.mean(axis=0)
    _, s, Vt = np.linalg.svd(V - c)
    basis, normal = Vt[:rank], Vt[rank:]
    F_list = [normal, -normal]
    b_list = [normal @ c, -(normal @ c)]
    if rank == 0:
        verts = V[:1]
    else:
        coords = (V - c) @ basis.T
        Fs, bs, idx_verts = _hull_hrep(coords)
        F_list.append(Fs @ basis)
        b_list.append(bs + Fs @ (basis @ c))
        verts = c + idx_verts @ basis
    return np.vstack(F_list), np.concatenate(b_list), verts


class Polytope:
    """Bounded convex polytope ``{x : F x <= b}`` with a lazily computed V-rep.

    An empty polytope is represented with ``empty=True``.
    """

    def __init__(self, F, b, vertices=None, empty: bool = False):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if F.shape[0] != b.size:
            raise PolytopeError("F and b sizes differ")
        self.F, self.b = F, b
        self._vertices = None if vertices is None else np.atleast_2d(np.asarray(vertices, dtype=float))
        self.empty = empty

    # -- constructors -----------------------------------------------------

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        n = lo.size
        F = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([hi, -lo])
        verts = np.array(list(itertools.product(*zip(lo, hi))))
        return cls(F, b, np.unique(verts, axis=0))

    @classmethod
    def inf_ball(cls, n: int, r: float) -> "Polytope":
        return cls.box(-r * np.ones(n), r * np.ones(n))

    @classmethod
    def from_vertices(cls, V) -> "Polytope":
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if V.size == 0:
            raise PolytopeError("no points given")
        F, b, verts = _hull_hrep(V)
        return cls(F, b, verts)

    @classmethod
    def empty_set(cls, n: int) -> "Polytope":
        return cls(np.zeros((0, n)), np.zeros(0), np.zeros((0, n)), empty=True)

    @classmethod
    def from_json(cls, obj) -> "Polytope":
        if isinstance(obj, str):
            obj = json.loads(obj)
        F = np.array(obj["F"], dtype=float)
        n = obj.get("dim") or (F.shape[1] if F.ndim == 2 and F.size else len(obj["vertices"][0]))
        if obj.get("empty"):
            return cls.empty_set(n)
        verts = obj.get("vertices")
        return cls(F.reshape(-1, n), obj["b"], None if not verts else verts)

    def to_json(self) -> dict:
        out = {"dim": self.dim, "F": self.F.tolist(), "b": self.b.tolist(),
               "vertices": [] if self.empty else self.vertices.tolist()}
        if self.empty:
            out["empty"] = True
        return out

    # -- basic properties -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    @property
    def vertices(self) -> np.ndarray:
        if self._vertices is None:
            self._vertices = vertex_enumeration(self)
        return self._vertices

    def is_empty(self) -> bool:
        if self.empty:
            return True
        if self._vertices is not None:
            return len(self._vertices) == 0
        center, r = chebyshev_center(self.F, self.b)
        return center is None

    def contains(self, x, tol: float = 1e-9) -> bool:
        if self.empty:
            return False
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(self.F @ x <= self.b + tol))

    def __contains__(self, x) -> bool:
        return self.contains(x)

    def support(self, direction) -> float:
        """``max_{x in P} d'x`` evaluated on the vertices."""
        d = np.asarray(direction, dtype=float)
        if self.empty:
            return -np.inf
        return float(np.max(self.vertices @ d.T, axis=0)) if d.ndim == 1 else np.max(self.vertices @ d.T, axis=0)

    def minimal(self) -> "Polytope":
        """Copy with redundant rows removed (rebuilt from the vertices)."""
        if self.empty:
            return self
        return Polytope.from_vertices(self.vertices)

    def intersect(self, other: "Polytope") -> "Polytope":
        if self.empty or other.empty:
            return Polytope.empty_set(self.dim)
        P = Polytope(np.vstack([self.F, other.F]), np.concatenate([self.b, other.b]))
        if P.is_empty():
            return Polytope.empty_set(self.dim)
        return P.minimal()

    def linear_map(self, M) -> "Polytope":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if self.empty:
            return Polytope.empty_set(M.shape[0])
        return Polytope.from_vertices(self.vertices @ M.T)

    def scale(self, c: float) -> "Polytope":
        return self.linear_map(c * np.eye(self.dim))

    def translate(self, t) -> "Polytope":
        t = np.asarray(t, dtype=float)
        return Polytope(self.F, self.b + self.F @ t, None if self._vertices is None else self._vertices + t,
                        empty=self.empty)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        V = self.vertices
        return V.min(axis=0), V.max(axis=0)

    def volume(self) -> float:
        if self.empty or len(self.vertices) <= self.dim:
            return 0.0
        try:
            return float(ConvexHull(self.vertices).volume)
        except QhullError:
            return 0.0

    def __repr__(self):
        nv = "?" if self._vertices is None else len(self._vertices)
        return f"Polytope(dim={self.dim}, facets={len(self.b)}, vertices={nv}, empty={self.empty})"


def vertex_enumeration(P: Polytope) -> np.ndarray:
    """Extreme points of a bounded H-polytope.

    Full-dimensional sets go through qhull's halfspace intersection; thin
    or degenerate sets (inscribed radius ~ 0) fall back to enumerating
    n-subsets of rows, which is fine for the small row counts of degenerate
    inputs here.
    """
    if P.empty:
        return np.zeros((0, P.dim))
    F, b = _normalize(P.F, P.b)
    n = F.shape[1]
    center, r = chebyshev_center(F, b)
    if center is None:
        raise PolytopeError("polytope is empty")
    if n == 1:
        hi = np.min(b[F[:, 0] > 0] / F[F[:, 0] > 0, 0]) if np.any(F[:, 0] > 0) else np.inf
        lo = np.max(b[F[:, 0] < 0] / F[F[:, 0] < 0, 0]) if np.any(F[:, 0] < 0) else -np.inf
        if not np.isfinite(hi) or not np.isfinite(lo):
            raise PolytopeError("polytope is unbounded")
        return np.array([[lo]]) if hi - lo < VERTEX_TOL else np.array([[lo], [hi]])
    if r > 1e-7:
        try:
            hs = HalfspaceIntersection(np.hstack([F, -b[:, None]]), center)
            pts = hs.intersections
            if not np.all(np.isfinite(pts)):
                raise PolytopeError("polytope is unbounded")
            return _hull_hrep(pts)[2]
        except QhullError:
            log.debug("qhull failed, falling back to brute-force enumeration", exc_info=True)
    V = _brute_vertices(F, b)
    if len(V) == 0:
        raise PolytopeError("polytope is empty or unbounded")
    return _hull_hrep(V)[2]


def minkowski_sum(P: Polytope, Q: Polytope) -> Polytope:
    if P.dim != Q.dim:
        raise PolytopeError("dimension mismatch")
    if P.empty or Q.empty:
        return Polytope.empty_set(P.dim)
    sums = (P.vertices[:, None, :] + Q.vertices[None, :, :]).reshape(-1, P.dim)
    return Polytope.from_vertices(sums)


def pontryagin_difference(P: Polytope, Q: Polytope) -> Polytope:
    """``{x : x + Q subset of P}`` by shrinking each facet by the support of ``Q``."""
    if P.dim != Q.dim:
        raise PolytopeError("dimension mismatch")
    if P.empty:
        return Polytope.empty_set(P.dim)
    shrink = np.max(P.F @ Q.vertices.T, axis=1)
    out = Polytope(P.F, P.b - shrink)
    if out.is_empty():
        return Polytope.empty_set(P.dim)
    return out.minimal()


def hausdorff_distance(P: Polytope, Q: Polytope) -> float:
    """Max support-function gap over both sets' unit facet normals.

    Exact for nested polytopes (the only use here) since the gap is then
    attained at a facet normal of the inner set.
    """
    if P.empty and Q.empty:
        return 0.0
    if P.empty or Q.empty:
        return np.inf
    dirs = np.vstack([_normalize(P.F, P.b)[0], _normalize(Q.F, Q.b)[0]])
    hp = np.max(P.vertices @ dirs.T, axis=0)
    hq = np.max(Q.vertices @ dirs.T, axis=0)
    return float(np.max(np.abs(hp - hq)))


def is_subset(P: Polytope, Q: Polytope, tol: float = 1e-9) -> bool:
    """``P subset of Q`` checked on the vertices of ``P``."""
    if P.empty:
        return True
    if Q.empty:
        return False
    return bool(np.all(Q.F @ P.vertices.T <= Q.b[:, None] + tol))


# -- uncertainty extreme points ----------------------------------------------

def _row_extremes(cols: int, eps: float) -> np.ndarray:
    out = []
    for j in range(cols):
        for s in (1.0, -1.0):
            r = np.zeros(cols)
            r[j] = s * eps
            out.append(r)
    return np.array(out)


def ball_vertices(rows: int, cols: int, eps: float) -> List[np.ndarray]:
    """Extreme points of ``{D : ||D||_inf->inf <= eps}``: one ``+-eps`` entry per row."""
    if eps == 0:
        return [np.zeros((rows, cols))]
    ext = _row_extremes(cols, eps)
    return [np.array(choice) for choice in itertools.product(ext, repeat=rows)]


@dataclass
class UncertaintyVertexSet:
    """Extreme matrix pairs ``(dA, dB)`` of the memoryless uncertainty balls."""

    pairs: List[Tuple[np.ndarray, np.ndarray]]

    @classmethod
    def from_bounds(cls, n: int, m: int, eps_A: float, eps_B: float) -> "UncertaintyVertexSet":
        VA = ball_vertices(n, n, eps_A)
        VB = ball_vertices(n, m, eps_B)
        return cls([(a, b) for a in VA for b in VB])

    @classmethod
    def from_model(cls, model) -> "UncertaintyVertexSet":
        return cls.from_bounds(model.n, model.m, model.eps_A, model.eps_B)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def box_vertices(n: int, r: float) -> np.ndarray:
    if r == 0:
        return np.zeros((1, n))
    return np.array(list(itertools.product([-r, r], repeat=n)))


# -- set recursions -----------------------------------------------------------

def _lti_matrices(model):
    if not model.is_lti:
        raise PolytopeError("set recursions here need LTI nominal dynamics")
    return model.A[0], model.B[0]


def robust_pre(X_target: Polytope, X: Polytope, U: Polytope, model,
               vertices: Optional[UncertaintyVertexSet] = None) -> Polytope:
    """States in ``X`` with an input in ``U`` that robustly reaches ``X_target``.

    The lifted ``(x, u)`` polytope stacks one copy of the target constraints
    per uncertainty vertex, with the disturbance handled exactly by
    tightening each row by the support function of the ``sigma_w`` box.
    ``u`` is then projected out by enumerating the lifted vertices.
    """
    n, m = X.dim, U.dim
    if X_target.empty or X.empty or U.empty:
        return Polytope.empty_set(n)
    A, B = _lti_matrices(model)
    vertices = vertices or UncertaintyVertexSet.from_model(model)
    Ft, bt = X_target.F, X_target.b
    bt_w = bt - model.sigma_w * np.sum(np.abs(Ft), axis=1)
    rows, rhs = [], []
    for dA, dB in vertices:
        rows.append(np.hstack([Ft @ (A + dA), Ft @ (B + dB)]))
        rhs.append(bt_w)
    rows.append(np.hstack([X.F, np.zeros((len(X.b), m))]))
    rhs.append(X.b)
    rows.append(np.hstack([np.zeros((len(U.b), n)), U.F]))
    rhs.append(U.b)
    F, b = _normalize(np.vstack(rows), np.concatenate(rhs))
    F, b = _dedupe(F, b)
    center, r = chebyshev_center(F, b)
    if center is None or r <= 1e-9:
        return Polytope.empty_set(n)
    lifted = vertex_enumeration(Polytope(F, b))
    return Polytope.from_vertices(lifted[:, :n])


def certify_point(x, X_target: Polytope, U: Polytope, model,
                  vertices: Optional[UncertaintyVertexSet] = None) -> Optional[np.ndarray]:
    """An input keeping every uncertain successor of ``x`` in ``X_target``, or ``None``."""
    A, B = _lti_matrices(model)
    vertices = vertices or UncertaintyVertexSet.from_model(model)
    x = np.asarray(x, dtype=float).ravel()
    m = U.dim
    Ft = X_target.F
    bt_w = X_target.b - model.sigma_w * np.sum(np.abs(Ft), axis=1)
    rows, rhs = [U.F], [U.b]
    for dA, dB in vertices:
        rows.append(Ft @ (B + dB))
        rhs.append(bt_w - Ft @ ((A + dA) @ x))
    # maximize the worst-case slack s: rows u + s <= rhs
    Fu = np.vstack(rows)
    bu = np.concatenate(rhs)
    c = np.zeros(m + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([Fu, np.ones((len(bu), 1))]), b_ub=bu,
                  bounds=[(None, None)] * m + [(None, 1.0)], method="highs")
    if res.status != 0 or res.x[-1] < -1e-9:
        return None
    return res.x[:m]


@dataclass
class InvariantSetResult:
    set: Polytope
    iterations: int
    trace: List[dict]


def max_robust_invariant_set(X: Polytope, U: Polytope, model, tol: float = 1e-6, max_iter: int = 200,
                             vertices: Optional[UncertaintyVertexSet] = None) -> InvariantSetResult:
    """Largest robust control invariant subset of ``X``.

    Iterates ``X_{k+1} = robust_pre(X_k) & X_k`` from ``X_0 = X`` until two
    successive sets are within ``tol`` in Hausdorff distance.
    """
    vertices = vertices or UncertaintyVertexSet.from_model(model)
    cur = X.minimal()
    trace = []
    for k in range(1, max_iter + 1):
        nxt = robust_pre(cur, X, U, model, vertices)
        if not nxt.empty:
            nxt = nxt.intersect(cur)
        dist = hausdorff_distance(cur, nxt)
        trace.append({"iteration": k, "facets": int(len(nxt.b)), "hausdorff": float(dist),
                      "volume": nxt.volume() if not nxt.empty else 0.0, "empty": bool(nxt.empty)})
        log.debug("invariant set iteration %d: facets=%d dist=%.3g", k, len(nxt.b), dist)
        if nxt.empty:
            return InvariantSetResult(nxt, k, trace)
        cur = nxt
        if dist <= tol:
            return InvariantSetResult(cur, k, trace)
    raise NonConvergenceError(f"invariant set recursion did not converge in {max_iter} iterations", trace)


def disturbance_invariant_set(model, K, truncation_tol: float = 1e-6, include_zero: bool = False,
                              max_terms: int = 500) -> Tuple[Polytope, int]:
    """Truncated ``sum_{i>=1} (A + BK)^i W`` (Minkowski sum).

    ``N`` is the first index with ``||(A+BK)^N||_inf * sigma_w <= truncation_tol``
    and the terms ``i = 1..N`` are summed (``i = 0..N`` with ``include_zero``).
    """
    A, B = _lti_matrices(model)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Acl = A + B @ K
    rho = max(abs(np.linalg.eigvals(Acl)))
    if rho >= 1:
        raise PolytopeError(f"closed loop is not strictly stable (spectral radius {rho:.4g})")
    n = A.shape[0]
    W = box_vertices(n, model.sigma_w)
    Z = Polytope.from_vertices(W if include_zero else np.zeros((1, n)))
    M = np.eye(n)
    N = 0
    for i in range(1, max_terms + 1):
        M = Acl @ M
        Z = minkowski_sum(Z, Polytope.from_vertices(W @ M.T))
        N = i
        if np.max(np.sum(np.abs(M), axis=1)) * model.sigma_w <= truncation_tol:
            break
    else:
        raise PolytopeError("disturbance invariant set did not reach the truncation tolerance")
    return Z, N
