"""First-neighbour clustering within one camera."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class ClusterSet:
    camera_id: int
    clusters: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.clusters)

    def labels(self, n: int | None = None) -> np.ndarray:
        """Cluster index of every sample."""
        n = sum(len(c) for c in self.clusters) if n is None else n
        out = np.full(n, -1, dtype=int)
        for k, members in enumerate(self.clusters):
            out[list(members)] = k
        return out


def pairwise_sq_dists(X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    # explicit differences so duplicated samples sit at exactly zero
    X = np.asarray(X, dtype=float)
    Y = X if Y is None else np.asarray(Y, dtype=float)
    chunk = max(1, 4_000_000 // max(1, Y.shape[0] * Y.shape[1]))
    out = np.empty((X.shape[0], Y.shape[0]))
    for s in range(0, X.shape[0], chunk):
        diff = X[s : s + chunk, None, :] - Y[None, :, :]
        out[s : s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def first_neighbors(X) -> np.ndarray:
    """Index of each sample's nearest other sample (ties -> smallest index)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("first neighbours need at least 2 samples")
    D = pairwise_sq_dists(X)
    np.fill_diagonal(D, np.inf)
    return np.argmin(D, axis=1)


def build_adjacency(k) -> sparse.csr_matrix:
    """Symmetric 0/1 adjacency: i~j iff i=k[j], j=k[i] or k[i]=k[j] (i != j)."""
    k = np.asarray(k, dtype=int)
    n = k.shape[0]
    rows = [np.arange(n), k]
    cols = [k, np.arange(n)]
    # samples sharing a first neighbour form a clique
    order = np.argsort(k, kind="stable")
    ks = k[order]
    bounds = np.flatnonzero(np.diff(ks)) + 1
    for group in np.split(order, bounds):
        if group.size > 1:
            a, b = np.meshgrid(group, group, indexing="ij")
            rows.append(a.ravel())
            cols.append(b.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    keep = r != c
    A = sparse.coo_matrix((np.ones(int(keep.sum()), dtype=np.int32), (r[keep], c[keep])), shape=(n, n))
    A = A.tocsr()
    A.data[:] = 1
    return A


def cluster_camera(X, camera_id: int = 0) -> ClusterSet:
    """Connected components of the first-neighbour graph of one camera.

    Clusters are ordered by their smallest member; members are sorted.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("camera has no samples")
    if n == 1:
        return ClusterSet(camera_id, ((0,),))
    A = build_adjacency(first_neighbors(X))
    _, labels = connected_components(A, directed=False)
    groups: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(idx)
    clusters = sorted((tuple(g) for g in groups.values()), key=lambda g: g[0])
    return ClusterSet(camera_id, tuple(clusters))


def cluster_purity(clusters: ClusterSet, identities) -> float:
    """Fraction of samples whose cluster's majority identity equals their own.

    Majority ties resolve to the lexicographically smallest identity.
    """
    total = 0
    good = 0
    for members in clusters.clusters:
        ids = [identities[m] for m in members]
        maj = majority_identity(ids)
        good += sum(1 for x in ids if x == maj)
        total += len(ids)
    return good / total if total else 0.0


def majority_identity(ids):
    if any(x is None for x in ids):
        raise ValueError("missing ground-truth identity")
    counts: dict[str, int] = {}
    for x in ids:
        counts[x] = counts.get(x, 0) + 1
    best = max(counts.values())
    return min(x for x, c in counts.items() if c == best)
