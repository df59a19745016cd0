"""Alternating consistent matching and per-pair metric learning."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .consistency import NetworkAssignments, reliability_table, threshold_matches
from .crossview_match import (
    CostMatrix,
    assignment_objective,
    cluster_cost_matrix,
    solve_assignment,
)
from .dataset import CameraDataset
from .intra_cluster import ClusterSet, cluster_camera
from .metric_learn import OptimizerConfig, build_training_set, learn_metric

log = logging.getLogger(__name__)

Pair = tuple[int, int]

CONVERGENCE_TOL = 1e-9

# per-pair status values
ACTIVE = "active"
CONVERGED = "converged"
NO_MATCHES = "no_consistent_matches"
MAX_ITER = "max_iter"


@dataclass
class PipelineConfig:
    max_iter: int = 10
    theta: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass
class IterationState:
    t: int
    metrics: dict[Pair, np.ndarray]
    costs: dict[Pair, CostMatrix]
    assignments: dict[Pair, np.ndarray]
    consistent: dict[Pair, np.ndarray]
    objective: dict[Pair, float]  # G(X^t; M^t)
    previous_objective: dict[Pair, float] = field(default_factory=dict)  # G(X^{t-1}; M^t)
    status: dict[Pair, str] = field(default_factory=dict)
    train_traces: dict[Pair, list] = field(default_factory=dict)


@dataclass
class PipelineState:
    clusters: dict[int, ClusterSet]
    history: list[IterationState]
    flagged: list[Pair] = field(default_factory=list)

    @property
    def final(self) -> IterationState:
        return self.history[-1]

    @property
    def t(self) -> int:
        return self.final.t

    @property
    def pairs(self) -> list[Pair]:
        return sorted(self.history[0].assignments)


def convergence_check(g_prev: float, g_curr: float, tol: float = CONVERGENCE_TOL) -> str:
    """'continue' while the new assignment strictly lowers the objective, else 'stop'."""
    return "stop" if g_curr > g_prev - tol else "continue"


def _map(fn: Callable, items: Iterable, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def camera_pairs(cameras) -> list[Pair]:
    cams = sorted(cameras)
    return [(p, q) for a, p in enumerate(cams) for q in cams[a + 1 :]]


def consistent_matches(assignments: dict[Pair, np.ndarray], theta: int) -> dict[Pair, np.ndarray]:
    return threshold_matches(reliability_table(NetworkAssignments(assignments)), theta)


class _Context:
    """Per-run immutable inputs shared by the stages."""

    def __init__(self, dataset: CameraDataset, jobs: int):
        cams = dataset.camera_ids
        if len(cams) < 3:
            raise ValueError(f"consistency requires >=3 cameras, dataset has {len(cams)}")
        self.feats = {c: dataset.features(c) for c in cams}
        self.dim = dataset.dimension
        self.jobs = jobs
        self.pairs = camera_pairs(cams)
        self.clusters = dict(zip(cams, _map(lambda c: cluster_camera(self.feats[c], c), cams, jobs)))

    def match(self, pq: Pair, M) -> tuple[CostMatrix, np.ndarray]:
        p, q = pq
        cm = cluster_cost_matrix(self.feats[p], self.clusters[p], self.feats[q], self.clusters[q], M)
        return cm, solve_assignment(cm).X


def _initial(ctx: _Context, theta: int) -> IterationState:
    metrics = {pq: np.eye(ctx.dim) for pq in ctx.pairs}
    results = dict(zip(ctx.pairs, _map(lambda pq: ctx.match(pq, metrics[pq]), ctx.pairs, ctx.jobs)))
    costs = {pq: results[pq][0] for pq in ctx.pairs}
    X = {pq: results[pq][1] for pq in ctx.pairs}
    G = {pq: assignment_objective(costs[pq], X[pq]) for pq in ctx.pairs}
    Xhat = consistent_matches(X, theta)
    status = {pq: ACTIVE for pq in ctx.pairs}
    return IterationState(0, metrics, costs, X, Xhat, G, {}, status)


def initial_matching(dataset: CameraDataset, theta: int = 1, jobs: int = 1) -> PipelineState:
    """Clustering plus identity-metric matching and consistency filtering only (t = 0)."""
    ctx = _Context(dataset, jobs)
    st0 = _initial(ctx, theta)
    return PipelineState(ctx.clusters, [st0], [pq for pq in ctx.pairs if not st0.consistent[pq].any()])


def run_pipeline(dataset: CameraDataset, config: PipelineConfig = PipelineConfig()) -> PipelineState:
    """Cluster each camera once, then alternate matching and metric updates.

    Every camera pair stops independently as soon as re-solving the
    assignment under its freshly learned metric no longer lowers the
    assignment objective; the run ends when all pairs have stopped or after
    ``max_iter`` metric updates.
    """
    config.validate()
    ctx = _Context(dataset, config.jobs)
    feats, clusters, pairs, jobs = ctx.feats, ctx.clusters, ctx.pairs, ctx.jobs
    match = ctx.match

    st0 = _initial(ctx, config.theta)
    metrics, costs, X, G, Xhat = st0.metrics, st0.costs, st0.assignments, st0.objective, st0.consistent
    status = dict(st0.status)
    flagged = [pq for pq in pairs if not Xhat[pq].any()]
    for pq in flagged:
        log.warning("camera pair %s has no consistent matches at t=0; keeping identity metric", pq)
    history = [st0]

    for t in range(1, config.max_iter + 1):
        active = [pq for pq in pairs if status[pq] == ACTIVE]
        if not active:
            break

        def update(pq):
            p, q = pq
            trace = []
            M = metrics[pq]
            if Xhat[pq].any():
                ts = build_training_set(
                    feats[p], clusters[p], feats[q], clusters[q], Xhat[pq], M,
                    config.optimizer.label_mode,
                )
                res = learn_metric(ts, config.optimizer, M)
                M = res.model.M
                trace = res.trace
            cm, Xt = match(pq, M)
            return M, cm, Xt, trace

        updates = dict(zip(active, _map(update, active, jobs)))
        metrics = dict(metrics)
        costs = dict(costs)
        X = dict(X)
        G = dict(G)
        g_prev: dict[Pair, float] = {}
        traces = {}
        for pq in active:
            M, cm, Xt, trace = updates[pq]
            g_old = assignment_objective(cm, X[pq])
            g_new = assignment_objective(cm, Xt)
            if g_new > g_old + CONVERGENCE_TOL:
                raise AssertionError(f"assignment objective increased for pair {pq}: {g_old} -> {g_new}")
            metrics[pq], costs[pq], X[pq], G[pq] = M, cm, Xt, g_new
            g_prev[pq] = g_old
            traces[pq] = trace
            if convergence_check(g_old, g_new) == "stop":
                status[pq] = CONVERGED if trace else NO_MATCHES
            elif t == config.max_iter:
                status[pq] = MAX_ITER
        Xhat = consistent_matches(X, config.theta)
        history.append(
            IterationState(t, dict(metrics), costs, X, Xhat, G, g_prev, dict(status), traces)
        )
        log.info(
            "t=%d active=%d consistent=%d", t,
            sum(s == ACTIVE for s in status.values()), sum(int(v.sum()) for v in Xhat.values()),
        )
    return PipelineState(clusters, history, flagged)
