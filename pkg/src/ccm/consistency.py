"""Network-wide reliability of cross-camera matches.

A direct match between clusters (p, i) and (q, j) is corroborated by every
two-hop path (p, i) -> (r, k) -> (q, j) through a third camera r. The
reliability of a pair is its direct bit plus the number of such paths; pairs
whose reliability exceeds a threshold are kept as consistent matches.
"""

from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

Pair = tuple[int, int]


class NetworkAssignments(Mapping):
    """Assignment matrices for every unordered camera pair, stored as (p, q), p < q.

    ``net[q, p]`` returns the transpose of ``net[p, q]``.
    """

    def __init__(self, matrices: Mapping[Pair, np.ndarray]):
        mats: dict[Pair, np.ndarray] = {}
        cams: set[int] = set()
        for (p, q), X in matrices.items():
            X = np.asarray(getattr(X, "X", X))
            if p == q:
                raise ValueError(f"self pair ({p}, {q})")
            if p > q:
                p, q, X = q, p, X.T
            if (p, q) in mats:
                raise ValueError(f"duplicate entry for pair ({p}, {q})")
            mats[(p, q)] = X.astype(np.int64)
            cams.update((p, q))
        self.cameras = sorted(cams)
        for a in self.cameras:
            for b in self.cameras:
                if a < b and (a, b) not in mats:
                    raise ValueError(f"missing assignment for camera pair ({a}, {b})")
        self._mats = mats
        self.sizes = {}
        for (p, q), X in mats.items():
            for cam, n in ((p, X.shape[0]), (q, X.shape[1])):
                if self.sizes.setdefault(cam, n) != n:
                    raise ValueError(f"inconsistent cluster count for camera {cam}")

    def __getitem__(self, key: Pair) -> np.ndarray:
        p, q = key
        if p < q:
            return self._mats[(p, q)]
        return self._mats[(q, p)].T

    def __iter__(self) -> Iterator[Pair]:
        return iter(sorted(self._mats))

    def __len__(self) -> int:
        return len(self._mats)


def _require_triplets(net: NetworkAssignments) -> None:
    if len(net.cameras) < 3:
        raise ValueError("consistency requires >=3 cameras")


def transitive_reliability(net: NetworkAssignments, p: int, q: int, i: int, j: int) -> int:
    """Number of two-hop paths from cluster i of camera p to cluster j of camera q."""
    _require_triplets(net)
    total = 0
    for r in net.cameras:
        if r in (p, q):
            continue
        total += int(net[p, r][i] @ net[r, q][:, j])
    return total


def transitive_table(net: NetworkAssignments, p: int, q: int) -> np.ndarray:
    _require_triplets(net)
    RT = np.zeros((net.sizes[p], net.sizes[q]), dtype=np.int64)
    for r in net.cameras:
        if r not in (p, q):
            RT += net[p, r] @ net[r, q]
    return RT


def reliability_table(net: NetworkAssignments) -> dict[Pair, np.ndarray]:
    """RLT = direct match bit + two-hop path count, for every pair p < q."""
    _require_triplets(net)
    return {pq: net[pq] + transitive_table(net, *pq) for pq in net}


def threshold_matches(table: Mapping[Pair, np.ndarray], theta: int = 1) -> dict[Pair, np.ndarray]:
    """Consistent matches: entries whose reliability strictly exceeds theta."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    return {pq: (np.asarray(RLT) > theta).astype(np.int8) for pq, RLT in table.items()}


def reliability_rows(net: NetworkAssignments, theta: int = 1):
    """Rows (p, q, i, j, direct, RT, RLT, kept) for every pair with RLT > 0."""
    rows = []
    for p, q in net:
        direct = net[p, q]
        RT = transitive_table(net, p, q)
        RLT = direct + RT
        for i, j in zip(*np.nonzero(RLT)):
            rows.append(
                (p, q, int(i), int(j), int(direct[i, j]), int(RT[i, j]), int(RLT[i, j]),
                 int(RLT[i, j] > theta))
            )
    return rows
