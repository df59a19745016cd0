"""Command-line driver: ``ccm generate|run|cluster|match|eval``.

Configuration comes from an optional flat ``key = value`` file; command-line
flags override it. ``run`` writes the effective configuration to
``<out>/config.txt`` so that a run directory is self-describing.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import shutil
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import (
    CameraDataset,
    SyntheticConfig,
    generate_synthetic,
    load_features,
    preprocess,
    save_features,
)
from .intra_cluster import cluster_camera
from .metric_learn import LABEL_MODES, OptimizerConfig
from .pipeline import PipelineConfig, initial_matching, run_pipeline
from .rundir import ArtifactError, build_report, dump_report, write_clusters, write_run

log = logging.getLogger("ccm")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
STAGES = ("cluster", "match", "full")


class ConfigError(ValueError):
    pass


# key -> parser; also the order keys are written to config.txt
SCHEMA = {
    "features": str,
    "pca_dim": int,
    "num_identities": int,
    "num_cameras": int,
    "dim": int,
    "presence_prob": float,
    "tracklets_min": int,
    "tracklets_max": int,
    "distortion": float,
    "noise_sigma": float,
    "seed": int,
    "theta": int,
    "max_iter": int,
    "jobs": int,
    "stage": str,
    "label_mode": str,
    "step": float,
    "lipschitz": float,
    "opt_max_iter": int,
    "opt_tol": float,
    "out": str,
}
SYNTHETIC_KEYS = (
    "num_identities", "num_cameras", "dim", "presence_prob",
    "tracklets_min", "tracklets_max", "distortion", "noise_sigma",
)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = SCHEMA[key](value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
    return out


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config_text(text, str(path))


def format_config(values: dict) -> str:
    lines = []
    for key in SCHEMA:
        if key == "out" or values.get(key) is None:
            continue
        v = values[key]
        lines.append(f"{key} = {v!r}" if isinstance(v, float) else f"{key} = {v}")
    return "\n".join(lines) + "\n"


@dataclasses.dataclass
class RunConfig:
    features: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    pca_dim: Optional[int] = None
    pipeline: PipelineConfig = dataclasses.field(default_factory=PipelineConfig)
    out: Optional[str] = None
    stage: str = "full"

    def validate(self) -> None:
        if (self.features is None) == (self.synthetic is None):
            raise ConfigError("exactly one of a feature file or a synthetic configuration is required")
        if self.synthetic is not None:
            self.synthetic.validate()
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.pipeline.optimizer.label_mode not in LABEL_MODES:
            raise ConfigError(f"label_mode must be one of {LABEL_MODES}")
        if self.pca_dim is not None and self.pca_dim < 1:
            raise ConfigError("pca_dim must be positive")
        self.pipeline.validate()

    @classmethod
    def from_values(cls, values: dict) -> "RunConfig":
        features = values.get("features")
        explicit_synth = [k for k in SYNTHETIC_KEYS if k in values]
        if features is not None and explicit_synth:
            raise ConfigError(
                "feature file given together with synthetic keys: " + ", ".join(explicit_synth)
            )
        synthetic = None
        if features is None:
            base = SyntheticConfig()
            synthetic = SyntheticConfig(
                num_identities=values.get("num_identities", base.num_identities),
                num_cameras=values.get("num_cameras", base.num_cameras),
                dim=values.get("dim", base.dim),
                presence_prob=values.get("presence_prob", base.presence_prob),
                tracklets_per_presence=(
                    values.get("tracklets_min", base.tracklets_per_presence[0]),
                    values.get("tracklets_max", base.tracklets_per_presence[1]),
                ),
                camera_distortion_scale=values.get("distortion", base.camera_distortion_scale),
                noise_sigma=values.get("noise_sigma", base.noise_sigma),
                seed=values.get("seed", base.seed),
            )
        base_opt = OptimizerConfig()
        opt = OptimizerConfig(
            step=values.get("step", base_opt.step),
            lipschitz=values.get("lipschitz", base_opt.lipschitz),
            max_iter=values.get("opt_max_iter", base_opt.max_iter),
            tol=values.get("opt_tol", base_opt.tol),
            label_mode=values.get("label_mode", base_opt.label_mode),
        )
        base_pipe = PipelineConfig()
        pipe = PipelineConfig(
            max_iter=values.get("max_iter", base_pipe.max_iter),
            theta=values.get("theta", base_pipe.theta),
            optimizer=opt,
            seed=values.get("seed", base_pipe.seed),
            jobs=values.get("jobs", base_pipe.jobs),
        )
        return cls(features, synthetic, values.get("pca_dim"), pipe, values.get("out"),
                   values.get("stage", "full"))

    def effective_values(self) -> dict:
        v: dict = {"features": self.features, "pca_dim": self.pca_dim}
        if self.synthetic is not None:
            s = self.synthetic
            v.update(
                num_identities=s.num_identities, num_cameras=s.num_cameras, dim=s.dim,
                presence_prob=float(s.presence_prob), tracklets_min=s.tracklets_per_presence[0],
                tracklets_max=s.tracklets_per_presence[1],
                distortion=float(s.camera_distortion_scale), noise_sigma=float(s.noise_sigma),
            )
        p, o = self.pipeline, self.pipeline.optimizer
        v.update(
            seed=p.seed, theta=p.theta, max_iter=p.max_iter, jobs=p.jobs, stage=self.stage,
            label_mode=o.label_mode, step=float(o.step),
            lipschitz=None if o.lipschitz is None else float(o.lipschitz),
            opt_max_iter=o.max_iter, opt_tol=float(o.tol),
        )
        return v


# ---------------------------------------------------------------- commands


def load_input(cfg: RunConfig) -> CameraDataset:
    if cfg.features is not None:
        raw = load_features(cfg.features)
    else:
        raw = generate_synthetic(cfg.synthetic)
    return preprocess(raw, cfg.pca_dim)


def write_census(dataset: CameraDataset, path) -> list[tuple[int, int, int]]:
    rows = dataset.census()
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["camera_id", "identities", "tracklets"])
        w.writerows(rows)
    return rows


def cmd_generate(config: SyntheticConfig, out) -> CameraDataset:
    """Write a synthetic feature file plus ``<out>.census.csv``."""
    config.validate()
    ds = generate_synthetic(config)
    out = Path(out)
    save_features(ds, out)
    rows = write_census(ds, out.with_name(out.name + ".census.csv"))
    print("camera_id identities tracklets")
    for c, n_id, n_t in rows:
        print(f"{c} {n_id} {n_t}")
    return ds


def _reset_run_dir(out: Path) -> None:
    # stale iterations from an earlier, longer run would leak into the report
    if (out / "state").is_dir():
        shutil.rmtree(out / "state")
    for name in ("report.json", "clusters.csv"):
        (out / name).unlink(missing_ok=True)


def cmd_run(cfg: RunConfig) -> Path:
    cfg.validate()
    if cfg.out is None:
        raise ConfigError("an output directory is required (--out)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _reset_run_dir(out)
    (out / "config.txt").write_text(format_config(cfg.effective_values()), encoding="utf-8")

    # the pipeline sees exactly what eval will later read back
    save_features(load_input(cfg), out / "features.ccmf")
    dataset = load_features(out / "features.ccmf")

    if cfg.stage == "cluster":
        clusters = {c: cluster_camera(dataset.features(c), c) for c in dataset.camera_ids}
        write_clusters(out / "clusters.csv", dataset, clusters)
        for c in dataset.camera_ids:
            print(f"camera {c}: {len(clusters[c])} clusters")
        return out

    theta = cfg.pipeline.theta
    if cfg.stage == "match":
        state = initial_matching(dataset, theta, cfg.pipeline.jobs)
    else:
        state = run_pipeline(dataset, cfg.pipeline)
    for pq in state.flagged:
        print(f"warning: camera pair {pq[0]}-{pq[1]} has no consistent matches", file=sys.stderr)
    write_run(out, dataset, state, theta)
    report = build_report(out, dataset, theta)
    dump_report(report, out / "report.json")
    _print_summary(report)
    return out


def cmd_eval(run_dir, features=None, baseline: bool = False, out=None) -> dict:
    """Rebuild the report from a run directory's artifacts.

    With ``baseline`` only the t=0 state (identity metrics, Euclidean
    matches) is evaluated.
    """
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.txt"
    feat_path = Path(features) if features else run_dir / "features.ccmf"
    missing = [str(p) for p in (cfg_path, feat_path, run_dir / "clusters.csv", run_dir / "state")
               if not p.exists()]
    if missing:
        raise ArtifactError("missing artifacts: " + ", ".join(missing))
    values = read_config(cfg_path)
    theta = values.get("theta", PipelineConfig().theta)
    dataset = load_features(feat_path)
    report = build_report(run_dir, dataset, theta, upto=0 if baseline else None)
    if out is not None:
        dump_report(report, out)
    _print_summary(report)
    return report


def _print_summary(report: dict) -> None:
    print(f"iterations: {report['iterations']}")
    if "f1" in report:
        print(
            "matches: precision {:.4f} recall {:.4f} f1 {:.4f} (direct precision {:.4f})".format(
                report["precision"]["micro"], report["recall"]["micro"], report["f1"]["micro"],
                report["direct_precision"]["micro"],
            )
        )
        print(f"retrieval: rank-1 {report['cmc'][0]:.4f} mAP {report['map']:.4f}")


# ---------------------------------------------------------------- argparse


def _add_input_flags(sp: argparse.ArgumentParser, features: bool = True) -> None:
    sp.add_argument("--config", help="key = value configuration file")
    sp.add_argument("--seed", type=int)
    if features:
        sp.add_argument("--features", help="CCM feature file (ccmf); omit to synthesise")
        sp.add_argument("--pca-dim", dest="pca_dim", type=int)
    g = sp.add_argument_group("synthetic data")
    g.add_argument("--num-identities", dest="num_identities", type=int)
    g.add_argument("--num-cameras", dest="num_cameras", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--presence-prob", dest="presence_prob", type=float)
    g.add_argument("--tracklets-min", dest="tracklets_min", type=int)
    g.add_argument("--tracklets-max", dest="tracklets_max", type=int)
    g.add_argument("--distortion", type=float)
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float)


def _add_run_flags(sp: argparse.ArgumentParser, stage: bool) -> None:
    _add_input_flags(sp)
    sp.add_argument("--out", help="run directory")
    sp.add_argument("--theta", type=int)
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--label-mode", dest="label_mode", choices=LABEL_MODES)
    if stage:
        sp.add_argument("--stage", choices=STAGES)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccm", description="Consistent cross-view tracklet matching")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded synthetic feature file")
    _add_input_flags(g, features=False)
    g.add_argument("--out", required=True, help="feature file to write")

    r = sub.add_parser("run", help="full pipeline into a run directory")
    _add_run_flags(r, stage=True)
    c = sub.add_parser("cluster", help="intra-camera clustering only")
    _add_run_flags(c, stage=False)
    m = sub.add_parser("match", help="clustering, t=0 matching and consistency filtering")
    _add_run_flags(m, stage=False)

    e = sub.add_parser("eval", help="recompute the report from a run directory")
    e.add_argument("run_dir")
    e.add_argument("--features", help="feature file (default: <run_dir>/features.ccmf)")
    e.add_argument("--baseline", action="store_true", help="evaluate identity metrics only")
    e.add_argument("--out", help="write the report JSON here")
    return ap


def _collect_values(args: argparse.Namespace) -> dict:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in SCHEMA:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "eval":
            cmd_eval(args.run_dir, args.features, args.baseline, args.out)
            return EXIT_OK
        values = _collect_values(args)
        if args.command == "generate":
            unknown = [k for k in values if k not in SYNTHETIC_KEYS + ("seed", "out")]
            if unknown:
                raise ConfigError("generate does not accept: " + ", ".join(sorted(unknown)))
            cfg = RunConfig.from_values({k: v for k, v in values.items() if k != "out"})
            cmd_generate(cfg.synthetic, args.out)
            return EXIT_OK
        if args.command in ("cluster", "match"):
            values["stage"] = "cluster" if args.command == "cluster" else "match"
        cmd_run(RunConfig.from_values(values))
        return EXIT_OK
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, RuntimeError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
