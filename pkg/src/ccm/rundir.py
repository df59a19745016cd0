"""Run-directory artifacts and the report built from them.

Layout::

    <out>/config.txt              effective key = value configuration
    <out>/features.ccmf           features as seen by the pipeline (after preprocessing)
    <out>/clusters.csv            camera_id,cluster_index,tracklet_id
    <out>/state/t<k>/metrics/M_<p>_<q>.ccmm
    <out>/state/t<k>/matches.csv      p,q,i,j,cost
    <out>/state/t<k>/reliability.csv  p,q,i,j,direct,RT,RLT,kept
    <out>/state/t<k>/trace.csv        p,q,g_prev,g_curr,status
    <out>/state/t<k>/train_trace.csv  pair,iter,objective,step,min_eig
    <out>/report.json

The report is always computed from the files on disk, so re-evaluating a
finished directory reproduces it exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .consistency import NetworkAssignments, reliability_rows
from .dataset import CameraDataset
from .evaluation import evaluate_matches, evaluate_retrieval
from .intra_cluster import ClusterSet
from .metric_learn import MetricModel, load_metric, save_metric
from .pipeline import PipelineState

Pair = tuple[int, int]


class ArtifactError(RuntimeError):
    pass


def _g(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def cluster_rows(dataset: CameraDataset, clusters: dict[int, ClusterSet]):
    rows = []
    for c in sorted(clusters):
        ts = dataset.cameras[c]
        for k, members in enumerate(clusters[c].clusters):
            rows.extend((c, k, ts[m].tracklet_id) for m in members)
    return rows


def write_clusters(path, dataset: CameraDataset, clusters: dict[int, ClusterSet]) -> None:
    _write_csv(Path(path), ["camera_id", "cluster_index", "tracklet_id"], cluster_rows(dataset, clusters))


def read_clusters(path, dataset: CameraDataset) -> dict[int, ClusterSet]:
    rows = _read_csv(Path(path))
    index = {c: {t.tracklet_id: i for i, t in enumerate(ts)} for c, ts in dataset.cameras.items()}
    groups: dict[int, dict[int, list[int]]] = {}
    for r in rows:
        c = int(r["camera_id"])
        try:
            idx = index[c][r["tracklet_id"]]
        except KeyError:
            raise ArtifactError(f"{path}: unknown tracklet {r['tracklet_id']!r} in camera {c}") from None
        groups.setdefault(c, {}).setdefault(int(r["cluster_index"]), []).append(idx)
    return {
        c: ClusterSet(c, tuple(tuple(sorted(g[k])) for k in sorted(g))) for c, g in sorted(groups.items())
    }


def match_rows(state_t, pairs):
    rows = []
    for p, q in pairs:
        X = state_t.assignments[(p, q)]
        E = state_t.costs[(p, q)].E
        rows.extend((p, q, int(i), int(j), _g(E[i, j])) for i, j in zip(*np.nonzero(X)))
    return rows


def write_iteration(root: Path, state_t, pairs, theta: int) -> None:
    d = root / "state" / f"t{state_t.t}"
    (d / "metrics").mkdir(parents=True, exist_ok=True)
    for p, q in pairs:
        save_metric(MetricModel((p, q), state_t.metrics[(p, q)]), d / "metrics" / f"M_{p}_{q}.ccmm")
    _write_csv(d / "matches.csv", ["p", "q", "i", "j", "cost"], match_rows(state_t, pairs))
    net = NetworkAssignments(state_t.assignments)
    _write_csv(
        d / "reliability.csv",
        ["p", "q", "i", "j", "direct", "RT", "RLT", "kept"],
        reliability_rows(net, theta),
    )
    trace = []
    for p, q in pairs:
        g_prev = state_t.previous_objective.get((p, q))
        trace.append((p, q, "" if g_prev is None else _g(g_prev), _g(state_t.objective[(p, q)]),
                      state_t.status[(p, q)]))
    _write_csv(d / "trace.csv", ["p", "q", "g_prev", "g_curr", "status"], trace)
    train = []
    for (p, q), rows in sorted(state_t.train_traces.items()):
        train.extend((f"{p}-{q}", it, _g(f), _g(step), _g(me)) for it, f, step, me in rows)
    _write_csv(d / "train_trace.csv", ["pair", "iter", "objective", "step", "min_eig"], train)


def write_run(root, dataset: CameraDataset, state: PipelineState, theta: int) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_clusters(root / "clusters.csv", dataset, state.clusters)
    for st in state.history:
        write_iteration(root, st, state.pairs, theta)


# ---------------------------------------------------------------- loading


def iteration_dirs(root: Path) -> list[Path]:
    base = root / "state"
    if not base.is_dir():
        raise ArtifactError(f"missing artifact: {base}")
    dirs = sorted(
        (p for p in base.iterdir() if p.is_dir() and p.name.startswith("t") and p.name[1:].isdigit()),
        key=lambda p: int(p.name[1:]),
    )
    if not dirs:
        raise ArtifactError(f"no iteration directories under {base}")
    return dirs


def load_metrics(d: Path) -> dict[Pair, np.ndarray]:
    files = sorted((d / "metrics").glob("M_*.ccmm"))
    if not files:
        raise ArtifactError(f"missing artifact: {d / 'metrics'}/M_*.ccmm")
    out = {}
    for f in files:
        m = load_metric(f)
        out[m.pair] = m.M
    return dict(sorted(out.items()))


def _pair_matrices(rows, sizes, key=None) -> dict[Pair, np.ndarray]:
    mats: dict[Pair, np.ndarray] = {}
    for (p, q) in sorted({(p, q) for p in sizes for q in sizes if p < q}):
        mats[(p, q)] = np.zeros((sizes[p], sizes[q]), dtype=np.int8)
    for r in rows:
        if key is None or int(r[key]):
            mats[(int(r["p"]), int(r["q"]))][int(r["i"]), int(r["j"])] = 1
    return mats


def build_report(root, dataset: CameraDataset, theta: int, upto: Optional[int] = None) -> dict:
    """Summary and evaluation computed purely from the artifacts under ``root``.

    ``upto`` ignores iterations after ``t = upto``; ``upto=0`` gives the
    identity-metric (Euclidean) baseline.
    """
    root = Path(root)
    missing = [str(root / n) for n in ("clusters.csv",) if not (root / n).exists()]
    if not (root / "state").is_dir():
        missing.append(str(root / "state"))
    if missing:
        raise ArtifactError("missing artifacts: " + ", ".join(missing))
    clusters = read_clusters(root / "clusters.csv", dataset)
    sizes = {c: len(cs) for c, cs in clusters.items()}
    dirs = iteration_dirs(root)
    if upto is not None:
        dirs = [d for d in dirs if int(d.name[1:]) <= upto]
        if not dirs:
            raise ArtifactError(f"no iteration directories with t <= {upto} under {root / 'state'}")
    final = dirs[-1]
    for name in ("matches.csv", "reliability.csv", "trace.csv"):
        if not (final / name).exists():
            raise ArtifactError(f"missing artifact: {final / name}")
    direct = _pair_matrices(_read_csv(final / "matches.csv"), sizes)
    kept = _pair_matrices(_read_csv(final / "reliability.csv"), sizes, key="kept")
    trace = _read_csv(final / "trace.csv")

    pairs = {}
    for r in trace:
        key = f"{r['p']}-{r['q']}"
        pq = (int(r["p"]), int(r["q"]))
        pairs[key] = {
            "status": r["status"],
            "objective": float(r["g_curr"]),
            "matches": int(direct[pq].sum()),
            "consistent": int(kept[pq].sum()),
        }
    kept0 = _pair_matrices(_read_csv(dirs[0] / "reliability.csv"), sizes, key="kept")
    report: dict = {
        "flagged_pairs": [f"{p}-{q}" for (p, q), m in kept0.items() if not m.any()],
        "theta": theta,
        "iterations": int(final.name[1:]),
        "num_cameras": len(dataset.camera_ids),
        "num_tracklets": len(dataset),
        "clusters_per_camera": {str(c): n for c, n in sizes.items()},
        "pairs": pairs,
    }
    if not dataset.has_ground_truth:
        return report

    ids = {c: dataset.identities(c) for c in dataset.camera_ids}
    for label, mats in (("", kept), ("direct_", direct)):
        ev = evaluate_matches(mats, clusters, ids)
        macro = ev.macro()
        per = {f"{p}-{q}": s for (p, q), s in ev.pairs.items()}
        for k, name in enumerate(("precision", "recall", "f1")):
            report[label + name] = {
                "micro": getattr(ev, name),
                "macro": macro[k],
                "pairs": {key: getattr(s, name) for key, s in per.items()},
            }
    feats = np.concatenate([dataset.features(c) for c in dataset.camera_ids])
    all_ids = [i for c in dataset.camera_ids for i in ids[c]]
    cams = [c for c in dataset.camera_ids for _ in dataset.cameras[c]]
    names = [t.tracklet_id for t in dataset.tracklets()]
    history = []
    ret = None
    for d in dirs:
        ret = evaluate_retrieval(feats, all_ids, cams, list(load_metrics(d).values()), names)
        history.append({"t": int(d.name[1:]), "rank1": ret.rank(1), "map": ret.map})
    report["cmc"] = [float(x) for x in ret.cmc]
    report["map"] = ret.map
    report["num_queries"] = ret.num_queries
    report["excluded_queries"] = list(ret.excluded_queries)
    report["retrieval_history"] = history
    return report


def dump_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
