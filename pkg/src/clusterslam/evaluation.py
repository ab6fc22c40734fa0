"""Trajectory accuracy (scale-aligned ATE) and plane-normal coherence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, NoMatches
from .geometry import Plane, Pose

MAX_DT = 0.02


@dataclass
class Trajectory:
    """Timestamped camera poses. Poses are stored as ``T_wc`` (camera-to-world), as in TUM files."""

    timestamps: np.ndarray
    poses: list[Pose]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    @classmethod
    def from_camera_poses(cls, timestamps, poses_cw: list[Pose]) -> Trajectory:
        """Build from world-to-camera poses (the optimizer's convention)."""
        return cls(timestamps, [p.inverse() for p in poses_cw])


@dataclass
class AlignmentResult:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residuals: np.ndarray  # per-pair position error after alignment, meters
    rmse: float

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(X) @ self.rotation.T + self.translation


def read_tum(path) -> Trajectory:
    """Parse ``timestamp tx ty tz qx qy qz qw`` lines; ``#`` comments and blank lines are skipped."""
    stamps, poses = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.replace(",", " ").split()]
            if len(vals) != 8:
                raise ValueError(f"malformed TUM line: {line!r}")
            stamps.append(vals[0])
            poses.append(Pose(vals[4:8], vals[1:4]))
    return Trajectory(np.array(stamps), poses)


def format_tum_line(timestamp: float, pose_wc: Pose) -> str:
    vals = [*pose_wc.t, *pose_wc.q]
    return f"{timestamp:.6f} " + " ".join(repr(float(v)) for v in vals)


def write_tum(path, traj: Trajectory) -> None:
    with open(path, "w") as fh:
        for ts, p in zip(traj.timestamps, traj.poses):
            fh.write(format_tum_line(ts, p) + "\n")


def associate(est: Trajectory, gt: Trajectory, max_dt: float = MAX_DT) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp pairing, closest pairs first, each frame used once."""
    if len(est) == 0 or len(gt) == 0:
        raise NoMatches("empty trajectory")
    dt = np.abs(est.timestamps[:, None] - gt.timestamps[None, :])
    i, j = np.nonzero(dt <= max_dt)
    order = np.lexsort((j, i, dt[i, j]))
    used_e, used_g, pairs = set(), set(), []
    for k in order:
        a, b = int(i[k]), int(j[k])
        if a in used_e or b in used_g:
            continue
        used_e.add(a)
        used_g.add(b)
        pairs.append((a, b))
    if not pairs:
        raise NoMatches(f"no timestamps within {max_dt} s")
    return sorted(pairs)


def align_similarity(est: np.ndarray, gt: np.ndarray, with_scale: bool = True) -> AlignmentResult:
    """Closed-form least-squares similarity mapping ``est`` onto ``gt`` (Umeyama).

    The SVD of the centered cross-covariance gives the rotation, with the
    reflection guard forcing ``det(R) = +1``.
    """
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(est) != len(gt):
        raise ValueError("point sets differ in length")
    if len(est) < 3:
        raise DegenerateConfiguration("need at least 3 pairs")
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    E, G = est - mu_e, gt - mu_g
    sv = np.linalg.svd(E, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateConfiguration("estimated positions are collinear")
    cov = G.T @ E / len(est)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_e = np.sum(E**2) / len(est)
    s = float(np.trace(np.diag(D) @ S) / var_e) if with_scale else 1.0
    t = mu_g - s * R @ mu_e
    res = np.linalg.norm(gt - (s * est @ R.T + t), axis=1)
    return AlignmentResult(s, R, t, res, float(np.sqrt(np.mean(res**2))))


def ate_rmse(est: Trajectory, gt: Trajectory, max_dt: float = MAX_DT, align: str = "sim3") -> float:
    """RMSE of camera positions after association and alignment.

    ``align`` is ``"sim3"`` (scale, rotation, translation; the monocular
    convention), ``"se3"`` or ``"none"``.
    """
    pairs = associate(est, gt, max_dt)
    pe = est.positions()[[a for a, _ in pairs]]
    pg = gt.positions()[[b for _, b in pairs]]
    if align == "none":
        return float(np.sqrt(np.mean(np.sum((pe - pg) ** 2, axis=1))))
    if align not in ("sim3", "se3"):
        raise ValueError(f"unknown alignment {align!r}")
    return align_similarity(pe, pg, with_scale=align == "sim3").rmse


def median_over_runs(values) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


def normal_angle(a: Plane, b: Plane) -> float:
    """Angle in degrees between the plane normals, ignoring orientation."""
    c = abs(float(a.normal @ b.normal))
    return float(np.degrees(np.arccos(min(1.0, c))))


def normal_angle_stats(planes: list[Plane], pairs: list[tuple[int, int]] | None = None) -> dict:
    """Max, min and median normal angle (degrees) over the given pairs (default: all pairs)."""
    if pairs is None:
        pairs = [(i, j) for i in range(len(planes)) for j in range(i + 1, len(planes))]
    if not pairs:
        raise ValueError("need at least one plane pair")
    ang = np.array([normal_angle(planes[i], planes[j]) for i, j in pairs])
    return {"max": float(ang.max()), "min": float(ang.min()), "median": float(np.median(ang))}
