"""Pairwise Mahalanobis metric learning with a weighted log-logistic loss.

The loss for a cluster pair with cost ``e`` against margin ``mu`` is
``softplus(s * (e - mu))`` where ``s`` is +1 for consistent matches and -1
otherwise, so matches are pulled below the margin and non-matches pushed
above it. Positive and negative pairs are reweighted by 1/N_pos and 1/N_neg.
The metric is optimised over the PSD cone by a monotone accelerated proximal
gradient method (projection is the proximal step) with backtracking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .crossview_match import cluster_cost_matrix
from .intra_cluster import ClusterSet

log = logging.getLogger(__name__)

LABEL_MODES = ("signed", "binary")


class MetricFormatError(ValueError):
    pass


@dataclass
class MetricModel:
    pair: tuple[int, int]
    M: np.ndarray

    @classmethod
    def identity(cls, pair, dim: int) -> "MetricModel":
        return cls(tuple(pair), np.eye(dim))

    def check(self, sym_tol: float = 1e-10, eig_tol: float = 1e-8) -> None:
        M = self.M
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"metric for {self.pair} is not square")
        if np.max(np.abs(M - M.T), initial=0.0) > sym_tol:
            raise ValueError(f"metric for {self.pair} is not symmetric")
        if np.linalg.eigvalsh(M).min(initial=0.0) < -eig_tol:
            raise ValueError(f"metric for {self.pair} is not PSD")


@dataclass
class PairTrainingSet:
    pair: tuple[int, int]
    consistent: np.ndarray  # n_p x n_q in {0, 1}
    deltas: np.ndarray  # n_p x n_q x d, representative difference vectors
    mu: float
    label_mode: str = "signed"

    def __post_init__(self):
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        self.consistent = (np.asarray(self.consistent) > 0).astype(np.int8)
        self.deltas = np.asarray(self.deltas, dtype=float)
        self._flat = self.deltas.reshape(-1, self.deltas.shape[-1])

    @property
    def n_pos(self) -> int:
        return int(self.consistent.sum())

    @property
    def n_neg(self) -> int:
        return int(self.consistent.size - self.n_pos)

    @cached_property
    def labels(self) -> np.ndarray:
        """Loss sign per pair: +1/-1, or the raw {1, 0} bit in binary mode."""
        if self.label_mode == "binary":
            return self.consistent.astype(float)
        return np.where(self.consistent == 1, 1.0, -1.0)

    @cached_property
    def weights(self) -> np.ndarray:
        pos = self.consistent == 1
        w = np.zeros(self.consistent.shape)
        if self.n_pos:
            w[pos] = 1.0 / self.n_pos
        if self.n_neg:
            w[~pos] = 1.0 / self.n_neg
        return w

    def costs(self, M) -> np.ndarray:
        D = self._flat
        return np.sum((D @ M) * D, axis=1).reshape(self.consistent.shape)


def build_training_set(
    Xp, clusters_p: ClusterSet, Xq, clusters_q: ClusterSet, consistent, M, label_mode="signed"
) -> PairTrainingSet:
    """Freeze representative sample pairs and the margin under metric ``M``.

    The representative of each cluster pair is its minimum-distance sample
    pair under ``M``; ``mu`` is the mean cost of the consistent matches.
    """
    consistent = np.asarray(consistent)
    if not consistent.any():
        raise ValueError(
            f"no consistent matches for pair ({clusters_p.camera_id}, {clusters_q.camera_id})"
        )
    cm = cluster_cost_matrix(Xp, clusters_p, Xq, clusters_q, M)
    Xp = np.asarray(Xp, dtype=float)
    Xq = np.asarray(Xq, dtype=float)
    deltas = Xp[cm.reps[..., 0]] - Xq[cm.reps[..., 1]]
    mu = float(cm.E[consistent > 0].mean())
    return PairTrainingSet(cm.pair, consistent, deltas, mu, label_mode)


def pair_loss(e, mu, label):
    """softplus(label * (e - mu)), evaluated without overflow."""
    return np.logaddexp(0.0, np.multiply(label, np.subtract(e, mu)))


def objective(M, ts: PairTrainingSet) -> float:
    if ts.n_pos == 0:
        raise ValueError(f"no consistent matches for pair {ts.pair}")
    losses = pair_loss(ts.costs(M), ts.mu, ts.labels)
    return float(np.sum(ts.weights * losses))


def objective_gradient(M, ts: PairTrainingSet) -> np.ndarray:
    s = ts.labels
    coef = ts.weights * s * expit(s * (ts.costs(M) - ts.mu))
    D = ts._flat
    G = D.T @ (coef.reshape(-1)[:, None] * D)
    return 0.5 * (G + G.T)


def psd_project(S) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clamp the negative eigenvalues to zero."""
    S = np.asarray(S, dtype=float)
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)):
        # eigh would silently return NaNs here
        raise np.linalg.LinAlgError(
            f"eigendecomposition failed (condition number nan): {int(np.sum(~np.isfinite(S)))} "
            "non-finite entries"
        )
    try:
        w, V = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigendecomposition failed (condition number {np.linalg.cond(S):.3e}): {exc}"
        ) from exc
    P = (V * np.maximum(w, 0.0)) @ V.T
    return 0.5 * (P + P.T)


@dataclass
class OptimizerConfig:
    step: float = 1.0
    lipschitz: Optional[float] = None
    max_iter: int = 200
    tol: float = 1e-6
    label_mode: str = "signed"

    def initial_step(self) -> float:
        if self.lipschitz:
            return min(self.step, 1.0 / self.lipschitz)
        return self.step


@dataclass
class LearnResult:
    model: MetricModel
    trace: list = field(default_factory=list)  # (iter, objective, step, min_eig)

    @property
    def objectives(self) -> list[float]:
        return [row[1] for row in self.trace]


def _min_eig(M) -> float:
    return float(np.linalg.eigvalsh(M).min())


def learn_metric(ts: PairTrainingSet, config: OptimizerConfig = OptimizerConfig(), M_init=None) -> LearnResult:
    """Minimise the weighted log-logistic objective over PSD matrices.

    Monotone FISTA: the extrapolated point takes a backtracked projected
    gradient step; the iterate only moves when the objective does not go up.
    A rejected step restarts the momentum.
    """
    if ts.n_pos == 0:
        raise ValueError(f"no consistent matches for pair {ts.pair}")
    d = ts.deltas.shape[-1]
    x = np.eye(d) if M_init is None else np.array(M_init, dtype=float)
    fx = objective(x, ts)
    if not math.isfinite(fx):
        raise FloatingPointError(f"non-finite objective for pair {ts.pair}")
    eta = config.initial_step()
    trace = [(0, fx, eta, _min_eig(x))]
    y, fy = x, fx
    t = 1.0
    for it in range(1, config.max_iter + 1):
        g = objective_gradient(y, ts)
        while True:
            z = psd_project(y - eta * g)
            fz = objective(z, ts)
            diff = z - y
            model = fy + float(np.sum(g * diff)) + float(np.sum(diff * diff)) / (2.0 * eta)
            if fz <= model + 1e-15 * max(1.0, abs(model)):
                break
            eta *= 0.5
            if eta < 1e-30:
                break
        if not math.isfinite(fz):
            raise FloatingPointError(f"non-finite objective for pair {ts.pair}")
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if fz <= fx:
            x_prev, fx_prev = x, fx
            x, fx = z, fz
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
            fy = objective(y, ts)
            trace.append((it, fx, eta, _min_eig(x)))
            if abs(fx_prev - fx) <= config.tol * max(abs(fx_prev), 1e-12):
                break
        else:
            # momentum overshoot: restart from the current iterate
            y, fy, t = x, fx, 1.0
            trace.append((it, fx, eta, _min_eig(x)))
    M = 0.5 * (x + x.T)
    return LearnResult(MetricModel(ts.pair, M), trace)


# ---------------------------------------------------------------- serialisation


def format_metric(model: MetricModel) -> str:
    p, q = model.pair
    d = model.M.shape[0]
    lines = [f"ccmm 1 {p} {q} {d}"]
    for row in model.M:
        lines.append(" ".join(format(float(x), ".17g") for x in row))
    return "\n".join(lines) + "\n"


def save_metric(model: MetricModel, path) -> None:
    Path(path).write_text(format_metric(model), encoding="utf-8")


def load_metric(path) -> MetricModel:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise MetricFormatError(f"{path}: empty metric file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "ccmm" or head[1] != "1":
        raise MetricFormatError(f"{path}: bad header {lines[0]!r}, expected 'ccmm 1 <p> <q> <d>'")
    try:
        p, q, d = int(head[2]), int(head[3]), int(head[4])
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise MetricFormatError(f"{path}: {exc}") from None
    if len(rows) != d or any(len(r) != d for r in rows):
        raise MetricFormatError(f"{path}: expected {d}x{d} values")
    return MetricModel((p, q), np.array(rows, dtype=float))
