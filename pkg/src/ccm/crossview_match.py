"""Cluster-to-cluster costs between two cameras and their optimal matching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .intra_cluster import ClusterSet


def mahalanobis_distance(a, b, M) -> float:
    """Squared Mahalanobis distance (a - b)^T M (a - b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    M = np.asarray(M, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or M.shape != (a.shape[0], a.shape[0]):
        raise ValueError(f"dimension mismatch: a{a.shape}, b{b.shape}, M{M.shape}")
    diff = a - b
    return float(diff @ M @ diff)


def pairwise_mahalanobis(A, B, M) -> np.ndarray:
    """All-pairs squared Mahalanobis distances between rows of A and rows of B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    M = np.asarray(M, dtype=float)
    if A.shape[1] != B.shape[1] or M.shape != (A.shape[1], A.shape[1]):
        raise ValueError(f"dimension mismatch: A{A.shape}, B{B.shape}, M{M.shape}")
    out = np.empty((A.shape[0], B.shape[0]))
    chunk = max(1, 4_000_000 // max(1, B.size))
    for s in range(0, A.shape[0], chunk):
        diff = A[s : s + chunk, None, :] - B[None, :, :]
        out[s : s + chunk] = np.einsum("abi,ij,abj->ab", diff, M, diff)
    return out


@dataclass(frozen=True)
class CostMatrix:
    pair: tuple[int, int]
    E: np.ndarray
    # reps[i, j] = (a, b): sample indices realising the minimum for clusters (i, j)
    reps: np.ndarray


def cluster_cost_matrix(
    Xp, clusters_p: ClusterSet, Xq, clusters_q: ClusterSet, M
) -> CostMatrix:
    """Single-linkage cluster costs: min pairwise distance between members.

    Ties between member pairs go to the lexicographically smallest (a, b).
    """
    if len(clusters_p) == 0 or len(clusters_q) == 0:
        raise ValueError("cluster sets must be non-empty")
    D = pairwise_mahalanobis(Xp, Xq, M)
    n_p, n_q = len(clusters_p), len(clusters_q)
    E = np.empty((n_p, n_q))
    reps = np.empty((n_p, n_q, 2), dtype=int)
    for i, ci in enumerate(clusters_p.clusters):
        rows = D[list(ci)]
        for j, cj in enumerate(clusters_q.clusters):
            block = rows[:, list(cj)]
            flat = int(np.argmin(block))
            a, b = divmod(flat, block.shape[1])
            E[i, j] = block[a, b]
            reps[i, j] = (ci[a], cj[b])
    return CostMatrix((clusters_p.camera_id, clusters_q.camera_id), E, reps)


# ---------------------------------------------------------------- assignment


def hungarian(C: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path Hungarian method on a square cost matrix.

    Returns ``(col_of_row, u, v)`` where ``u``/``v`` are optimal dual
    potentials: ``C[i, j] - u[i] - v[j] >= 0`` with equality on the matching.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("hungarian() expects a square matrix")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=int)
    col_of_row[p[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _solve_fixed_cardinality(E: np.ndarray, m: int):
    """Min-cost matching of exactly ``m`` pairs in a rectangular matrix.

    Pads to a square problem: dummy rows absorb unmatched columns and dummy
    columns absorb unmatched rows; dummy-dummy edges are prohibitively costly.
    Returns (pairs, cost, u, v) with u/v the duals restricted to real rows/cols.
    """
    R, C = E.shape
    if m == 0:
        return [], 0.0, np.zeros(R), np.zeros(C)
    N = R + C - m
    big = 1.0 + 2.0 * float(np.abs(E).sum())
    P = np.zeros((N, N))
    P[:R, :C] = E
    P[R:, C:] = big
    col_of_row, u, v = hungarian(P)
    pairs = [(i, int(col_of_row[i])) for i in range(R) if col_of_row[i] < C]
    cost = math.fsum(E[i, j] for i, j in pairs)
    return pairs, cost, u[:R], v[:C]


@dataclass(frozen=True)
class AssignmentMatrix:
    pair: tuple[int, int]
    X: np.ndarray

    def matches(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.X))]


def solve_assignment(E, pair: tuple[int, int] = (0, 1)) -> AssignmentMatrix:
    """Minimum-cost one-to-one matching selecting exactly min(n_p, n_q) pairs.

    Among equal-cost optima, returns the lexicographically smallest sorted
    list of (i, j) pairs.
    """
    if isinstance(E, CostMatrix):
        pair = E.pair
        E = E.E
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or not np.all(np.isfinite(E)):
        raise ValueError("cost matrix must be a finite 2-d array")
    n_p, n_q = E.shape
    k = min(n_p, n_q)
    X = np.zeros((n_p, n_q), dtype=np.int8)
    if k == 0:
        return AssignmentMatrix(pair, X)

    pairs, opt, u, v = _solve_fixed_cardinality(E, k)
    scale = 1.0 + float(np.abs(E).max())
    tol = 1e-12 * (1.0 + float(np.abs(E).sum()))
    tight = (E - u[:, None] - v[None, :]) <= 1e-9 * scale

    current = dict(pairs)
    fixed_cost = 0.0
    remaining = k
    cols = set(range(n_q))
    chosen: dict[int, int] = {}
    for i in range(n_p):
        if remaining == 0:
            break
        later_rows = list(range(i + 1, n_p))
        bound = current.get(i, n_q)
        pick = None
        for j in sorted(c for c in cols if c < bound and tight[i, c]):
            need = remaining - 1
            sub_cols = sorted(cols - {j})
            if need > min(len(later_rows), len(sub_cols)):
                continue
            sub = E[np.ix_(later_rows, sub_cols)] if need else np.zeros((0, 0))
            sub_pairs, sub_cost, _, _ = _solve_fixed_cardinality(sub, need)
            if fixed_cost + E[i, j] + sub_cost <= opt + tol:
                pick = j
                current = dict(chosen)
                current[i] = j
                for a, b in sub_pairs:
                    current[later_rows[a]] = sub_cols[b]
                break
        if pick is None and i in current:
            pick = current[i]
        if pick is not None:
            chosen[i] = pick
            cols.discard(pick)
            remaining -= 1
            fixed_cost += E[i, pick]
    for i, j in chosen.items():
        X[i, j] = 1
    return AssignmentMatrix(pair, X)


def assignment_objective(E, X) -> float:
    """Total cost of the selected pairs, sum_ij e_ij * x_ij."""
    if isinstance(E, CostMatrix):
        E = E.E
    if isinstance(X, AssignmentMatrix):
        X = X.X
    E = np.asarray(E, dtype=float)
    X = np.asarray(X)
    if E.shape != X.shape:
        raise ValueError(f"shape mismatch: E{E.shape} vs X{X.shape}")
    return math.fsum(float(E[i, j]) * float(X[i, j]) for i, j in zip(*np.nonzero(X)))
