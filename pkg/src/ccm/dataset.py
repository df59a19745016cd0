"""Tracklet features: ingestion, preprocessing and a seeded synthetic generator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

FORMAT_MAGIC = "ccmf"
FORMAT_VERSION = 1
UNKNOWN_IDENTITY = "-"
LINEAR_DISTORTION_RATIO = 0.25


class FeatureFormatError(ValueError):
    """Raised for malformed CCM feature files."""


@dataclass(frozen=True)
class TrackletFeature:
    tracklet_id: str
    camera_id: int
    feature: np.ndarray
    identity: Optional[str] = None

    def __eq__(self, other):
        if not isinstance(other, TrackletFeature):
            return NotImplemented
        return (
            self.tracklet_id == other.tracklet_id
            and self.camera_id == other.camera_id
            and self.identity == other.identity
            and self.feature.shape == other.feature.shape
            and bool(np.array_equal(self.feature, other.feature))
        )

    __hash__ = None  # type: ignore[assignment]


class CameraDataset:
    """Tracklets grouped by camera, in a fixed order.

    Cameras with no tracklets are dropped (with a warning) so that every
    camera that survives construction can take part in matching.
    """

    def __init__(self, tracklets: Sequence[TrackletFeature], dimension: Optional[int] = None):
        tracklets = list(tracklets)
        if dimension is None:
            if not tracklets:
                raise ValueError("cannot infer dimension of an empty dataset")
            dimension = int(tracklets[0].feature.shape[0])
        seen = set()
        cameras: dict[int, list[TrackletFeature]] = {}
        for t in tracklets:
            if t.feature.ndim != 1 or t.feature.shape[0] != dimension:
                raise ValueError(
                    f"tracklet {t.tracklet_id!r} has dimension {t.feature.shape}, expected {dimension}"
                )
            if t.tracklet_id in seen:
                raise ValueError(f"duplicate tracklet_id {t.tracklet_id!r}")
            if t.camera_id < 0:
                raise ValueError(f"negative camera_id {t.camera_id} for {t.tracklet_id!r}")
            seen.add(t.tracklet_id)
            cameras.setdefault(int(t.camera_id), []).append(t)
        self.dimension = int(dimension)
        self.cameras: dict[int, tuple[TrackletFeature, ...]] = {
            c: tuple(cameras[c]) for c in sorted(cameras)
        }

    @classmethod
    def from_cameras(cls, cameras: dict[int, Sequence[TrackletFeature]], dimension: int) -> "CameraDataset":
        empty = [c for c, ts in cameras.items() if len(ts) == 0]
        for c in empty:
            log.warning("camera %d has no tracklets; dropping it", c)
        flat = [t for c in sorted(cameras) for t in cameras[c]]
        return cls(flat, dimension)

    @property
    def camera_ids(self) -> list[int]:
        return list(self.cameras)

    def tracklets(self) -> list[TrackletFeature]:
        return [t for c in self.cameras for t in self.cameras[c]]

    def features(self, camera_id: int) -> np.ndarray:
        ts = self.cameras[camera_id]
        return np.stack([t.feature for t in ts]) if ts else np.zeros((0, self.dimension))

    def identities(self, camera_id: int) -> list[Optional[str]]:
        return [t.identity for t in self.cameras[camera_id]]

    @property
    def has_ground_truth(self) -> bool:
        return all(t.identity is not None for t in self.tracklets())

    def __len__(self) -> int:
        return sum(len(ts) for ts in self.cameras.values())

    def __eq__(self, other):
        if not isinstance(other, CameraDataset):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.camera_ids == other.camera_ids
            and all(self.cameras[c] == other.cameras[c] for c in self.cameras)
        )

    __hash__ = None  # type: ignore[assignment]

    def census(self) -> list[tuple[int, int, int]]:
        """(camera_id, #identities, #tracklets) per camera."""
        rows = []
        for c, ts in self.cameras.items():
            ids = {t.identity for t in ts if t.identity is not None}
            rows.append((c, len(ids), len(ts)))
        return rows

    def map_features(self, fn) -> "CameraDataset":
        """New dataset with ``fn`` applied to the stacked N x d feature matrix."""
        order = self.tracklets()
        mat = np.stack([t.feature for t in order])
        out = np.asarray(fn(mat), dtype=float)
        new = [
            TrackletFeature(t.tracklet_id, t.camera_id, out[k].copy(), t.identity)
            for k, t in enumerate(order)
        ]
        return CameraDataset(new, out.shape[1])


# ---------------------------------------------------------------- preprocessing


def mean_pool_tracklet(frames) -> np.ndarray:
    """Element-wise mean of per-frame feature vectors."""
    if len(frames) == 0:
        raise ValueError("empty tracklet")
    arr = np.asarray(frames, dtype=float)
    if arr.ndim != 2:
        raise ValueError("frames must share one dimension")
    return arr.mean(axis=0)


def l2_normalize(v, eps: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if not norm > eps:
        raise ValueError("degenerate feature")
    return v / norm


@dataclass
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray  # target_dim x d, rows ordered by descending variance
    explained_variance: np.ndarray

    def transform(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) @ self.components.T

    def inverse_transform(self, reduced) -> np.ndarray:
        return np.asarray(reduced, dtype=float) @ self.components + self.mean


def pca_reduce(features, target_dim: int) -> tuple[np.ndarray, PCAProjection]:
    """Project mean-centred rows of ``features`` onto the top principal axes.

    Returns the N x target_dim scores and the fitted projection. The
    explained variances use the unbiased (N - 1) normalisation.
    """
    X = np.asarray(features, dtype=float)
    n, d = X.shape
    if not 1 <= target_dim <= min(n, d):
        raise ValueError(f"target_dim must be in [1, {min(n, d)}], got {target_dim}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:target_dim].copy()
    # sign convention: largest-magnitude loading positive, for reproducible output
    flip = np.sign(comps[np.arange(target_dim), np.argmax(np.abs(comps), axis=1)])
    flip[flip == 0] = 1.0
    comps *= flip[:, None]
    var = s[:target_dim] ** 2 / max(n - 1, 1)
    proj = PCAProjection(mean=mean, components=comps, explained_variance=var)
    return proj.transform(X), proj


def preprocess(dataset: CameraDataset, pca_dim: Optional[int] = None) -> CameraDataset:
    """PCA (optional, fit over all cameras) followed by l2 normalisation."""
    def _apply(mat):
        if pca_dim is not None:
            mat, _ = pca_reduce(mat, pca_dim)
        return np.stack([l2_normalize(row) for row in mat])

    return dataset.map_features(_apply)


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SyntheticConfig:
    num_identities: int = 20
    num_cameras: int = 4
    dim: int = 16
    presence_prob: float = 0.7
    tracklets_per_presence: tuple[int, int] = (1, 3)
    camera_distortion_scale: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_cameras < 3:
            raise ValueError(
                f"num_cameras={self.num_cameras}: consistency constraints need at least 3 cameras"
            )
        if self.num_identities < 1 or self.dim < 1:
            raise ValueError("num_identities and dim must be positive")
        if not 0.0 < self.presence_prob <= 1.0:
            raise ValueError("presence_prob must lie in (0, 1]")
        lo, hi = self.tracklets_per_presence
        if not 1 <= lo <= hi:
            raise ValueError("tracklets_per_presence must satisfy 1 <= lo <= hi")
        if self.camera_distortion_scale < 0 or self.noise_sigma < 0:
            raise ValueError("distortion and noise must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def generate_synthetic(config: SyntheticConfig) -> CameraDataset:
    """Seeded camera network with ground-truth identities.

    Camera ``c`` maps a prototype ``x`` to ``A_c x + b_c`` with
    ``A_c = I + s/4 * G_c / sqrt(d)`` and ``b_c = s * g_c / sqrt(d)``
    (``G_c``, ``g_c`` standard normal, ``s`` the distortion scale); each
    tracklet adds isotropic Gaussian noise and is l2-normalised.

    Draw order (fixed, so the sampler can be replayed): identity prototypes,
    per-camera affine maps, the identity x camera presence mask, tracklet
    counts, then per-tracklet noise and the within-camera shuffle.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_id, n_cam, d = config.num_identities, config.num_cameras, config.dim
    s = config.camera_distortion_scale

    prototypes = _unit_rows(rng, n_id, d)
    # camera bias dominates; the linear part reshapes identities only mildly
    linear = np.eye(d)[None] + LINEAR_DISTORTION_RATIO * s * rng.standard_normal((n_cam, d, d)) / math.sqrt(d)
    offset = s * rng.standard_normal((n_cam, d)) / math.sqrt(d)
    presence = rng.random((n_id, n_cam)) < config.presence_prob
    lo, hi = config.tracklets_per_presence
    counts = rng.integers(lo, hi + 1, size=(n_id, n_cam))

    width = len(str(n_id - 1))
    cameras: dict[int, list[TrackletFeature]] = {}
    for c in range(n_cam):
        items = []
        for i in range(n_id):
            if not presence[i, c]:
                continue
            clean = linear[c] @ prototypes[i] + offset[c]
            for k in range(counts[i, c]):
                noise = config.noise_sigma * rng.standard_normal(d)
                items.append((f"c{c}_id{i:0{width}d}_t{k}", f"id{i:0{width}d}", clean + noise))
        order = rng.permutation(len(items))
        cameras[c] = [
            TrackletFeature(items[k][0], c, l2_normalize(items[k][2]), items[k][1]) for k in order
        ]
    return CameraDataset.from_cameras(cameras, d)


# ---------------------------------------------------------------- file format


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_features(dataset: CameraDataset, path) -> None:
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION} {dataset.dimension}"]
    for t in dataset.tracklets():
        ident = UNKNOWN_IDENTITY if t.identity is None else t.identity
        vals = ",".join(_fmt(x) for x in t.feature)
        lines.append(f"{t.tracklet_id},{t.camera_id},{ident},{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path) -> CameraDataset:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    header_seen = False
    dim = 0
    tracklets: list[TrackletFeature] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            parts = line.split()
            if len(parts) != 3 or parts[0] != FORMAT_MAGIC:
                raise FeatureFormatError(f"{path}:{lineno}: expected header 'ccmf 1 <d>'")
            if parts[1] != str(FORMAT_VERSION):
                raise FeatureFormatError(f"{path}:{lineno}: unsupported version {parts[1]}")
            try:
                dim = int(parts[2])
            except ValueError:
                raise FeatureFormatError(f"{path}:{lineno}: bad dimension {parts[2]!r}") from None
            if dim < 1:
                raise FeatureFormatError(f"{path}:{lineno}: dimension must be positive")
            header_seen = True
            continue
        fields = line.split(",")
        if len(fields) != dim + 3:
            raise FeatureFormatError(
                f"{path}:{lineno}: expected {dim + 3} fields, found {len(fields)}"
            )
        tid, cam, ident = fields[0], fields[1], fields[2]
        if not tid:
            raise FeatureFormatError(f"{path}:{lineno}: empty tracklet_id")
        if tid in seen:
            raise FeatureFormatError(f"{path}:{lineno}: duplicate tracklet_id {tid!r}")
        try:
            cam_id = int(cam)
            vec = np.array([float(v) for v in fields[3:]], dtype=float)
        except ValueError as exc:
            raise FeatureFormatError(f"{path}:{lineno}: {exc}") from None
        if cam_id < 0:
            raise FeatureFormatError(f"{path}:{lineno}: negative camera_id")
        seen.add(tid)
        tracklets.append(
            TrackletFeature(tid, cam_id, vec, None if ident == UNKNOWN_IDENTITY else ident)
        )
    if not header_seen:
        raise FeatureFormatError(f"{path}: missing header")
    if not tracklets:
        raise FeatureFormatError(f"{path}: no tracklets")
    return CameraDataset(tracklets, dim)
