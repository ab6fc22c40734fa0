"""Robust plane estimation for planar-prior clusters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cluster_map import Cluster, SemanticMap
from .errors import DegenerateGeometry, NoModel
from .geometry import Plane, point_plane_distance

DEFAULT_MIN_INLIERS = {"keyboard": 50, "book": 30, "table": 100, "floor": 100, "road": 150}
KAPPA = 3.0


@dataclass
class RansacConfig:
    iterations: int = 200
    threshold_m: float = 0.015
    road_threshold_m: float = 0.10
    confidence: float = 0.999
    min_inliers: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_MIN_INLIERS))
    default_min_inliers: int = 50
    sample_size: int = 3
    # consensus beyond the minimal sample needed for a hypothesis to count
    min_support: int = 3
    retry_every: int = 10
    # refit an accepted plane once its cluster has grown by this factor (0 disables)
    refit_growth: float = 1.5
    # only points observed at least this often take part in a fit
    min_observations: int = 2
    kappa: float = KAPPA

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("ransac iterations must be >= 1")
        if not (self.threshold_m > 0 and self.road_threshold_m > 0):
            raise ValueError("ransac thresholds must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("ransac confidence must lie in (0, 1)")
        if self.sample_size != 3:
            raise ValueError("plane hypotheses use 3-point samples")

    def min_inliers_for(self, class_name: str) -> int:
        return int(self.min_inliers.get(class_name, self.default_min_inliers))

    def threshold_for(self, scale: str) -> float:
        return self.road_threshold_m if scale == "road" else self.threshold_m


@dataclass
class PlaneFitResult:
    plane: Plane
    inliers: np.ndarray  # indices (or point ids) of inliers
    rms: float

    @property
    def inlier_count(self) -> int:
        return len(self.inliers)


def _canonical_sign(pi: np.ndarray) -> np.ndarray:
    if abs(pi[3]) > 1e-12:
        return -pi if pi[3] > 0 else pi
    k = int(np.argmax(np.abs(pi[:3])))
    return -pi if pi[k] < 0 else pi


def fit_plane_svd(points) -> Plane:
    """Least-squares plane through the centroid.

    The normal is the right singular vector of the centered points with the
    smallest singular value. The result has ``|pi| = 1`` and ``d <= 0``.
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(X) < 3:
        raise DegenerateGeometry("need at least 3 points to fit a plane")
    c = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - c, full_matrices=False)
    if s[1] - s[2] < 1e-9 * max(1.0, s[0]):
        raise DegenerateGeometry("points are collinear or the fit is ill-conditioned")
    n = vt[2]
    pi = np.append(n, -n @ c)
    return Plane(_canonical_sign(pi / np.linalg.norm(pi)))


def _plane_from_sample(P: np.ndarray):
    n = np.cross(P[1] - P[0], P[2] - P[0])
    norm = np.linalg.norm(n)
    scale = np.linalg.norm(P[1] - P[0]) * np.linalg.norm(P[2] - P[0])
    if norm <= 1e-12 * max(scale, 1e-300):
        return None
    n /= norm
    return n, -n @ P[0]


def required_iterations(inlier_ratio: float, confidence: float, sample_size: int = 3) -> float:
    """Iterations needed so that an all-inlier sample is drawn with the given confidence."""
    w = inlier_ratio**sample_size
    if w >= 1.0:
        return 1.0
    if w <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - w)


def ransac_plane(points, cfg: RansacConfig, seed: int = 0, threshold: float | None = None, min_points: int = 3) -> PlaneFitResult:
    """RANSAC over 3-point samples, refit by SVD on the best consensus set.

    ``inliers`` in the result are indices into ``points``. Deterministic for
    a fixed seed.
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(X)
    thr = cfg.threshold_m if threshold is None else threshold
    if n < max(3, min_points):
        raise NoModel(f"{n} points, need at least {max(3, min_points)}")
    rng = np.random.default_rng(seed)

    best_count, best_mask = 0, None
    needed = float(cfg.iterations)
    it = 0
    while it < min(cfg.iterations, needed):
        it += 1
        idx = rng.choice(n, size=3, replace=False)
        model = _plane_from_sample(X[idx])
        if model is None:
            continue
        normal, d = model
        mask = np.abs(X @ normal + d) <= thr
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
            needed = required_iterations(count / n, cfg.confidence)

    if best_mask is None or best_count < cfg.sample_size + cfg.min_support:
        raise NoModel(f"best hypothesis has {best_count} inliers")

    mask = best_mask
    # refit, then re-score until the consensus set is stable
    for _ in range(3):
        plane = fit_plane_svd(X[mask])
        new_mask = np.abs(point_plane_distance(plane, X)) <= thr
        if new_mask.sum() < 3:
            break
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    plane = fit_plane_svd(X[mask])
    dist = point_plane_distance(plane, X)
    mask = np.abs(dist) <= thr
    if mask.sum() < 3:
        raise NoModel("refined plane lost its support")
    rms = float(np.sqrt(np.mean(dist[mask] ** 2)))
    return PlaneFitResult(plane=plane, inliers=np.flatnonzero(mask), rms=rms)


def accept_plane(cluster: Cluster, fit: PlaneFitResult, cfg: RansacConfig, class_name: str) -> bool:
    return fit.inlier_count >= cfg.min_inliers_for(class_name)


def prune_far_points(cluster: Cluster, smap: SemanticMap, plane: Plane, kappa: float = KAPPA) -> list[int]:
    """Exclude members farther than ``kappa * rms`` from the planar constraint.

    Excluded points stay members of the cluster (so the partition is kept)
    but are listed in ``cluster.pruned``. Returns the newly pruned ids.
    """
    ids = [p for p in cluster.members if p not in cluster.pruned]
    if not ids:
        return []
    dist = np.abs(point_plane_distance(plane, smap.positions(ids)))
    limit = kappa * cluster.inlier_rms
    removed = [pid for pid, d in zip(ids, dist) if d > limit]
    cluster.pruned.update(removed)
    return removed


def fit_cluster(cluster: Cluster, smap: SemanticMap, cfg: RansacConfig, seed: int = 0) -> bool:
    """Fit, gate and install a plane on a planar cluster; returns True if a plane was accepted.

    On acceptance the cluster's plane, inlier statistics and pruned set are
    replaced. A rejected refit keeps the previous plane. Members seen in
    fewer than ``cfg.min_observations`` keyframes are not yet triangulated
    and do not take part in the fit.
    """
    info = smap.class_table[cluster.cls]
    cluster.fitted_size = len(cluster)
    ids = [p for p in cluster.members if len(smap.points[p].observations) >= cfg.min_observations]
    cluster.needs_refit = False
    min_in = cfg.min_inliers_for(info.name)
    if len(ids) < max(3, min_in):
        return False
    X = smap.positions(ids)
    try:
        fit = ransac_plane(X, cfg, seed=seed, threshold=cfg.threshold_for(info.scale), min_points=min_in)
    except (NoModel, DegenerateGeometry):
        return False
    if not accept_plane(cluster, fit, cfg, info.name):
        return False
    cluster.plane = fit.plane
    cluster.inlier_count = fit.inlier_count
    cluster.inlier_rms = fit.rms
    cluster.pruned = set()
    prune_far_points(cluster, smap, fit.plane, cfg.kappa)
    return True


def cluster_needs_fit(cluster: Cluster, smap: SemanticMap, cfg: RansacConfig) -> bool:
    """Fit when the cluster first reaches its minimum, retry every few new points, refit after growth."""
    if not cluster.planar:
        return False
    info = smap.class_table[cluster.cls]
    if len(cluster) < cfg.min_inliers_for(info.name):
        return False
    if cluster.needs_refit:
        return True
    if cluster.plane is not None:
        return cfg.refit_growth > 0 and len(cluster) >= cfg.refit_growth * cluster.fitted_size
    return cluster.fitted_size == 0 or len(cluster) - cluster.fitted_size >= cfg.retry_every
