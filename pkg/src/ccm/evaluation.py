"""Label-estimation and retrieval scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .crossview_match import pairwise_mahalanobis
from .intra_cluster import ClusterSet, majority_identity


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class PairScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[2]


@dataclass
class MatchEvaluation:
    pairs: dict[tuple[int, int], PairScore]

    @property
    def true_positives(self) -> int:
        return sum(s.tp for s in self.pairs.values())

    @property
    def false_positives(self) -> int:
        return sum(s.fp for s in self.pairs.values())

    @property
    def false_negatives(self) -> int:
        return sum(s.fn for s in self.pairs.values())

    @property
    def precision(self) -> float:
        return _prf(self.true_positives, self.false_positives, self.false_negatives)[0]

    @property
    def recall(self) -> float:
        return _prf(self.true_positives, self.false_positives, self.false_negatives)[1]

    @property
    def f1(self) -> float:
        return _prf(self.true_positives, self.false_positives, self.false_negatives)[2]

    def macro(self) -> tuple[float, float, float]:
        """Unweighted mean of per-pair precision, recall and F1."""
        if not self.pairs:
            return 0.0, 0.0, 0.0
        vals = np.array([(s.precision, s.recall, s.f1) for s in self.pairs.values()])
        return tuple(float(x) for x in vals.mean(axis=0))

    def predicted(self) -> int:
        return self.true_positives + self.false_positives


def cluster_identities(clusters: ClusterSet, identities: Sequence) -> list:
    """Majority ground-truth identity of each cluster."""
    return [majority_identity([identities[m] for m in c]) for c in clusters.clusters]


def evaluate_matches(
    predicted: Mapping[tuple[int, int], np.ndarray],
    clusters: Mapping[int, ClusterSet],
    identities: Mapping[int, Sequence],
) -> MatchEvaluation:
    """Score predicted cluster pairs against majority-identity ground truth.

    A predicted pair is correct when both clusters share a majority identity;
    every such cluster pair across the camera pair is a ground-truth positive.
    """
    major = {c: cluster_identities(clusters[c], identities[c]) for c in clusters}
    out = {}
    for (p, q), X in sorted(predicted.items()):
        X = np.asarray(getattr(X, "X", X))
        ip = np.array(major[p], dtype=object)
        iq = np.array(major[q], dtype=object)
        truth = ip[:, None] == iq[None, :]
        pred = X > 0
        tp = int(np.sum(pred & truth))
        fp = int(np.sum(pred & ~truth))
        fn = int(np.sum(~pred & truth))
        out[(p, q)] = PairScore(tp, fp, fn)
    return MatchEvaluation(out)


def query_gallery_distance(query, gallery, metrics) -> float:
    """Smallest squared Mahalanobis distance over all pairwise metric models."""
    metrics = list(metrics)
    if not metrics:
        raise ValueError("need at least one metric model")
    q = np.asarray(query, dtype=float)[None]
    g = np.asarray(gallery, dtype=float)[None]
    return float(min(pairwise_mahalanobis(q, g, getattr(M, "M", M))[0, 0] for M in metrics))


def min_metric_distances(Q, G, metrics) -> np.ndarray:
    metrics = list(metrics)
    if not metrics:
        raise ValueError("need at least one metric model")
    D = None
    for M in metrics:
        Dm = pairwise_mahalanobis(Q, G, getattr(M, "M", M))
        D = Dm if D is None else np.minimum(D, Dm)
    return D


def average_precision(ranked_hits) -> float:
    """Non-interpolated AP of a 0/1 relevance list in ranked order."""
    hits = np.asarray(ranked_hits, dtype=bool)
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


@dataclass
class RetrievalEvaluation:
    cmc: np.ndarray
    map: float
    num_queries: int
    excluded_queries: list = field(default_factory=list)

    def rank(self, k: int) -> float:
        if len(self.cmc) == 0:
            return 0.0
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def evaluate_retrieval(
    features, identities, cameras, metrics, query_ids=None
) -> RetrievalEvaluation:
    """Cross-camera retrieval: every tracklet queries all tracklets of other cameras.

    Ranking is ascending by the min-over-metrics distance with ties broken by
    gallery index. Queries whose identity is absent from their gallery are
    excluded and listed.
    """
    X = np.asarray(features, dtype=float)
    ids = np.asarray(identities, dtype=object)
    cams = np.asarray(cameras)
    n = X.shape[0]
    names = list(range(n)) if query_ids is None else list(query_ids)
    if any(i is None for i in ids):
        raise ValueError("missing ground-truth identity")
    D = min_metric_distances(X, X, metrics)
    cmc_hits = np.zeros(max(n - 1, 1))
    aps = []
    excluded = []
    for qi in range(n):
        gal = np.flatnonzero(cams != cams[qi])
        hits = ids[gal] == ids[qi]
        if not hits.any():
            excluded.append(names[qi])
            continue
        order = np.argsort(D[qi, gal], kind="stable")
        ranked = hits[order]
        first = int(np.argmax(ranked))
        cmc_hits[first:] += 1
        aps.append(average_precision(ranked))
    used = len(aps)
    max_gallery = max((int(np.sum(cams != c)) for c in cams), default=0)
    cmc = cmc_hits[:max_gallery] / used if used else np.zeros(max_gallery)
    return RetrievalEvaluation(cmc, float(np.mean(aps)) if aps else 0.0, used, excluded)
