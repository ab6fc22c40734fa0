"""Rigid transforms, pinhole projection and homogeneous planes.

Quaternions are stored in (x, y, z, w) order, the same order used by the
TUM trajectory format. Tangent vectors of SE(3) are ordered (omega, upsilon):
rotation first, translation second. Pose updates are left-multiplicative,
``T <- exp(xi) * T``, so a pose perturbation lives in the camera frame.

The vectorized helpers (``quat_*``, ``so3_*``, ``se3_*_batch``) operate on
arrays with arbitrary leading dimensions and are what the optimizer uses;
``Pose`` wraps a single transform for the rest of the code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateGeometry

ZMIN = 1e-6
_SMALL_ANGLE = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for an array of 3-vectors, shape (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # canonical hemisphere w >= 0
    return np.where(q[..., 3:4] < 0.0, -q, q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bx, by, bz, bw = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.array(q, dtype=float)
    q[..., :3] *= -1.0
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    out = np.empty(np.shape(x) + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - z * w)
    out[..., 0, 2] = 2 * (x * z + y * w)
    out[..., 1, 0] = 2 * (x * y + z * w)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - x * w)
    out[..., 2, 0] = 2 * (x * z - y * w)
    out[..., 2, 1] = 2 * (y * z + x * w)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's method, single matrix)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return quat_normalize(np.array(q))


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation vector(s) to unit quaternion(s)."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    # sin(theta/2)/theta, Taylor-expanded near zero
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / safe)
    return np.concatenate([k * omega, np.cos(half)], axis=-1)


def so3_log(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) to rotation vector(s) with angle in [0, pi]."""
    q = quat_normalize(q)
    v = q[..., :3]
    w = q[..., 3:4]
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(n, w)
    small = n < _SMALL_ANGLE
    # w is ~1 whenever n is small, so the series is safe there
    series = (2.0 / w) * (1.0 - n**2 / (3.0 * w**2))
    k = np.where(small, series, theta / np.where(small, 1.0, n))
    return k * v


def _left_jacobian_terms(theta: np.ndarray):
    """Coefficients A=(1-cos)/theta^2 and B=(theta-sin)/theta^3 of the SO(3) left Jacobian."""
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (t - np.sin(t)) / t**3)
    return a, b


def se3_exp_batch(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tangent vectors (..., 6) to (quaternions (..., 4), translations (..., 3))."""
    xi = np.asarray(xi, dtype=float)
    omega, upsilon = xi[..., :3], xi[..., 3:]
    theta = np.linalg.norm(omega, axis=-1)
    a, b = _left_jacobian_terms(theta)
    W = skew(omega)
    V = np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)
    t = np.einsum("...ij,...j->...i", V, upsilon)
    return so3_exp(omega), t


def se3_log_batch(q: np.ndarray, t: np.ndarray) -> np.ndarray:
    omega = so3_log(q)
    theta = np.linalg.norm(omega, axis=-1)
    W = skew(omega)
    small = theta < 1e-4
    th = np.where(small, 1.0, theta)
    # coefficient of W^2 in V^-1
    c = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        (1.0 - th * np.sin(th) / (2.0 * (1.0 - np.cos(th)))) / th**2,
    )
    Vinv = np.eye(3) - 0.5 * W + c[..., None, None] * (W @ W)
    upsilon = np.einsum("...ij,...j->...i", Vinv, np.asarray(t, dtype=float))
    return np.concatenate([omega, upsilon], axis=-1)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform ``T_cw``.

    ``q`` is a unit quaternion (x, y, z, w), ``t`` a translation in meters.
    Both are normalized and frozen on construction.
    """

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.q, dtype=float).reshape(4))
        t = np.array(self.t, dtype=float).reshape(3)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> Pose:
        return cls(matrix_to_quat(R), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> Pose:
        return inverse(self)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Apply the transform to one point (3,) or many points (N, 3)."""
        return np.asarray(X, dtype=float) @ self.R.T + self.t

    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R^T t``."""
        return -self.R.T @ self.t

    def __repr__(self) -> str:
        return f"Pose(q={np.round(self.q, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """Matrix product ``a * b``."""
    return Pose(quat_multiply(a.q, b.q), a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    qi = quat_conjugate(p.q)
    return Pose(qi, -(quat_to_matrix(qi) @ p.t))


def se3_exp(xi: np.ndarray) -> Pose:
    q, t = se3_exp_batch(np.asarray(xi, dtype=float).reshape(6))
    return Pose(q, t)


def se3_log(p: Pose) -> np.ndarray:
    return se3_log_batch(p.q, p.t)


def retract(p: Pose, delta: np.ndarray) -> Pose:
    """Left update ``exp(delta) * p``; the quaternion is renormalized by ``Pose``."""
    return compose(se3_exp(delta), p)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)


def project_camera(K: CameraIntrinsics, Xc: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points, no depth check."""
    Xc = np.asarray(Xc, dtype=float)
    z = Xc[..., 2]
    return np.stack([K.fx * Xc[..., 0] / z + K.cx, K.fy * Xc[..., 1] / z + K.cy], axis=-1)


def project(pose: Pose, K: CameraIntrinsics, X: np.ndarray) -> np.ndarray:
    """Project a world point into pixel coordinates (u, v)."""
    Xc = pose.transform(np.asarray(X, dtype=float).reshape(3))
    if not Xc[2] > ZMIN:
        raise BehindCamera(f"camera-frame depth {Xc[2]:.3g} <= {ZMIN}")
    return project_camera(K, Xc)


def unproject(pose: Pose, K: CameraIntrinsics, uv: np.ndarray, depth: float) -> np.ndarray:
    """World point seen at pixel ``uv`` with camera-frame depth ``depth``."""
    u, v = np.asarray(uv, dtype=float)
    Xc = np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])
    inv = pose.inverse()
    return inv.transform(Xc)


@dataclass(frozen=True, eq=False)
class Plane:
    """Homogeneous plane ``pi = (a, b, c, d)`` normalized so that ``|pi| = 1``."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(4)
        if not np.all(np.isfinite(pi)) or np.linalg.norm(pi[:3]) <= 1e-6 * max(1.0, abs(pi[3])):
            raise DegenerateGeometry("plane normal vanishes (plane at infinity)")
        pi = pi / np.linalg.norm(pi)
        pi.flags.writeable = False
        object.__setattr__(self, "pi", pi)

    @classmethod
    def from_normal_offset(cls, normal, offset: float) -> Plane:
        return cls(np.append(np.asarray(normal, dtype=float), offset))

    @property
    def normal(self) -> np.ndarray:
        """Unit normal (a, b, c) / |(a, b, c)|."""
        return self.pi[:3] / np.linalg.norm(self.pi[:3])

    @property
    def normal_scale(self) -> float:
        return float(np.linalg.norm(self.pi[:3]))

    def flipped(self) -> Plane:
        return Plane(-self.pi)

    def __repr__(self) -> str:
        return f"Plane({np.round(self.pi, 6).tolist()})"


def point_plane_residual(plane: Plane, X: np.ndarray) -> np.ndarray:
    """``pi^T (X, 1)`` for one point or an (N, 3) array."""
    X = np.asarray(X, dtype=float)
    return X @ plane.pi[:3] + plane.pi[3]


def point_plane_distance(plane: Plane, X: np.ndarray) -> np.ndarray:
    """Signed metric distance in meters: the residual divided by ``|(a, b, c)|``."""
    return point_plane_residual(plane, X) / plane.normal_scale
