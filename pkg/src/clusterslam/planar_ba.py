"""Bundle adjustment with Huber-robust reprojection terms and point-plane regularizers.

The objective is

    sum_ij rho(|e_ij|) + sum_k sum_{j in O_k} rho_plane(pi_k^T X_j)

where ``e_ij`` is the whitened reprojection error of point j in keyframe i
and the plane term uses information weight ``sigma**2`` (sigma = 100 makes a
1 cm point-plane residual cost about as much as a 1 px reprojection error).
Planes are held fixed; only poses and points are optimized. Poses are updated
on the left, ``T <- exp(delta) T``, with ``delta = (omega, upsilon)``.

The damped normal equations are solved by eliminating the points (Schur
complement on the 3x3 point blocks) and solving the reduced pose system
with a dense Cholesky factorization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .cluster_map import SemanticMap
from .errors import BehindCamera, EmptyWindow, SingularNormalEquations
from .geometry import ZMIN, CameraIntrinsics, Plane, Pose, quat_multiply, quat_normalize, quat_to_matrix, se3_exp_batch, skew

CHI2_1DOF_95 = 3.841


@dataclass
class BAConfig:
    sigma: float = 100.0
    max_iterations: int = 20
    global_max_iterations: int = 50
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    lambda_max: float = 1e10
    rel_tol: float = 1e-8
    step_tol: float = 1e-10
    huber_reproj: float = 2.447
    huber_plane_sigmas: float = 1.96
    chi2_plane: float = CHI2_1DOF_95
    pixel_sigma: float = 1.0
    gate_rounds: int = 2
    min_point_observations: int = 2
    solver: str = "schur"

    def __post_init__(self):
        if not (self.sigma > 0 and self.lambda0 > 0 and self.rel_tol > 0 and self.step_tol > 0):
            raise ValueError("sigma, lambda0 and tolerances must be positive")
        if self.solver not in ("schur", "dense"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @property
    def plane_weight(self) -> float:
        return self.sigma**2

    @property
    def sigma_eff(self) -> float:
        """Standard deviation implied by the plane information weight, in meters."""
        return 1.0 / self.sigma

    @property
    def huber_plane(self) -> float:
        return self.huber_plane_sigmas * self.sigma_eff


def huber(r, delta):
    """Huber cost and IRLS weight ``min(1, delta/|r|)``; works on scalars and arrays."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("huber delta must be positive")
    a = np.abs(np.asarray(r, dtype=float))
    quad = a <= delta
    cost = np.where(quad, 0.5 * a**2, delta * (a - 0.5 * delta))
    weight = np.where(quad, 1.0, delta / np.where(quad, 1.0, a))
    if cost.ndim == 0:
        return float(cost), float(weight)
    return cost, weight


def _projection_jacobian(K: CameraIntrinsics, Xc: np.ndarray) -> np.ndarray:
    x, y, z = Xc[..., 0], Xc[..., 1], Xc[..., 2]
    iz = 1.0 / z
    J = np.zeros(Xc.shape[:-1] + (2, 3))
    J[..., 0, 0] = K.fx * iz
    J[..., 0, 2] = -K.fx * x * iz * iz
    J[..., 1, 1] = K.fy * iz
    J[..., 1, 2] = -K.fy * y * iz * iz
    return J


def reprojection_residual_jacobian(pose: Pose, K: CameraIntrinsics, X, measured):
    """Residual ``proj(T, X) - x`` with Jacobians wrt the pose tangent (2x6) and point (2x3)."""
    R = pose.R
    Xc = R @ np.asarray(X, dtype=float) + pose.t
    if not Xc[2] > ZMIN:
        raise BehindCamera(f"camera-frame depth {Xc[2]:.3g}")
    uv = np.array([K.fx * Xc[0] / Xc[2] + K.cx, K.fy * Xc[1] / Xc[2] + K.cy])
    Jp = _projection_jacobian(K, Xc)
    J_pose = np.hstack([-Jp @ skew(Xc), Jp])
    J_point = Jp @ R
    return uv - np.asarray(measured, dtype=float), J_pose, J_point


def plane_residual_jacobian(plane: Plane, X):
    """Residual ``pi^T (X, 1)`` and its gradient wrt X, which is ``(a, b, c)``."""
    X = np.asarray(X, dtype=float)
    return float(X @ plane.pi[:3] + plane.pi[3]), plane.pi[:3].copy()


@dataclass
class BAProblem:
    K: CameraIntrinsics
    pose_ids: list[int]
    q: np.ndarray  # (F, 4)
    t: np.ndarray  # (F, 3)
    fixed: np.ndarray  # (F,) bool
    point_ids: list[int]
    X: np.ndarray  # (P, 3)
    obs_pose: np.ndarray  # (M,) index into poses
    obs_point: np.ndarray  # (M,) index into points
    measured: np.ndarray  # (M, 2)
    obs_info: np.ndarray  # (M,) isotropic information 1/variance, px^-2
    plane_point: np.ndarray  # (Q,) index into points
    planes: np.ndarray  # (Q, 4)
    plane_cluster: np.ndarray  # (Q,) owning cluster id
    plane_info: np.ndarray  # (Q,) information weight, m^-2
    plane_active: np.ndarray  # (Q,) bool
    delta_reproj: float = 2.447
    delta_plane: float = 0.0196

    @property
    def n_plane_factors(self) -> int:
        return len(self.plane_point)

    def pose(self, kf_id: int) -> Pose:
        i = self.pose_ids.index(kf_id)
        return Pose(self.q[i], self.t[i])

    def copy(self) -> BAProblem:
        from dataclasses import replace

        return replace(
            self,
            q=self.q.copy(),
            t=self.t.copy(),
            X=self.X.copy(),
            plane_active=self.plane_active.copy(),
            pose_ids=list(self.pose_ids),
            point_ids=list(self.point_ids),
        )


def make_problem(
    K: CameraIntrinsics,
    poses: dict[int, Pose],
    points: dict[int, np.ndarray],
    observations: list[tuple[int, int, np.ndarray]],
    fixed: set[int],
    plane_factors: list[tuple[int, Plane]] = (),
    cfg: BAConfig | None = None,
    plane_cluster: list[int] | None = None,
) -> BAProblem:
    """Assemble a problem from plain containers.

    ``observations`` holds (keyframe id, point id, measured pixel) triples
    and ``plane_factors`` (point id, plane) pairs.
    """
    cfg = cfg or BAConfig()
    if not fixed:
        raise ValueError("at least one pose must be fixed")
    pose_ids = sorted(poses)
    point_ids = sorted(points)
    pidx = {k: i for i, k in enumerate(pose_ids)}
    lidx = {k: i for i, k in enumerate(point_ids)}
    for kf in fixed:
        if kf not in pidx:
            raise ValueError(f"fixed pose {kf} is not a problem variable")
    obs_pose = np.array([pidx[o[0]] for o in observations], dtype=np.intp)
    obs_point = np.array([lidx[o[1]] for o in observations], dtype=np.intp)
    measured = np.array([o[2] for o in observations], dtype=float).reshape(-1, 2)
    info = np.full(len(observations), 1.0 / cfg.pixel_sigma**2)
    pf = list(plane_factors)
    return BAProblem(
        K=K,
        pose_ids=pose_ids,
        q=np.array([poses[k].q for k in pose_ids], dtype=float).reshape(-1, 4),
        t=np.array([poses[k].t for k in pose_ids], dtype=float).reshape(-1, 3),
        fixed=np.array([k in fixed for k in pose_ids], dtype=bool),
        point_ids=point_ids,
        X=np.array([points[k] for k in point_ids], dtype=float).reshape(-1, 3),
        obs_pose=obs_pose,
        obs_point=obs_point,
        measured=measured,
        obs_info=info,
        plane_point=np.array([lidx[p] for p, _ in pf], dtype=np.intp),
        planes=np.array([pl.pi for _, pl in pf], dtype=float).reshape(-1, 4),
        plane_cluster=np.array(plane_cluster if plane_cluster is not None else [-1] * len(pf), dtype=np.int64),
        plane_info=np.full(len(pf), cfg.plane_weight),
        plane_active=np.ones(len(pf), dtype=bool),
        delta_reproj=cfg.huber_reproj,
        delta_plane=cfg.huber_plane,
    )


def build_problem(smap: SemanticMap, K: CameraIntrinsics, window="ALL", cfg: BAConfig | None = None, use_planes: bool = True) -> BAProblem:
    """Build the BA problem for a keyframe window (or ``"ALL"`` for the global problem).

    Every observation of a point seen in the window becomes a reprojection
    factor; keyframes outside the window that observe those points enter as
    fixed poses, and the oldest window keyframe is fixed as the gauge.
    Plane factors are added for the non-pruned members of clusters with an
    accepted plane.
    """
    cfg = cfg or BAConfig()
    if isinstance(window, str) and window == "ALL":
        win = sorted(smap.keyframes)
    else:
        win = sorted(k for k in window if k in smap.keyframes)
    if not win:
        raise EmptyWindow("no keyframes in the BA window")
    win_set = set(win)

    point_ids = []
    for pid in sorted(smap.points):
        obs = smap.points[pid].observations
        if len(obs) >= cfg.min_point_observations and any(o.keyframe in win_set for o in obs):
            point_ids.append(pid)

    observations = []
    pose_set = set(win)
    for pid in point_ids:
        for o in smap.points[pid].observations:
            observations.append((o.keyframe, pid, o.pixel, o.weight))
            pose_set.add(o.keyframe)
    # the two oldest keyframes pin both the rigid gauge and the monocular scale
    anchors = set(sorted(smap.keyframes)[:2]) & pose_set
    fixed = {win[0]} | (pose_set - win_set) | anchors

    plane_factors, owners = [], []
    if use_planes:
        in_problem = set(point_ids)
        for cid in sorted(smap.clusters):
            cl = smap.clusters[cid]
            if not cl.planar or cl.plane is None:
                continue
            for pid in cl.constrained_ids():
                if pid in in_problem:
                    plane_factors.append((pid, cl.plane))
                    owners.append(cid)

    prob = make_problem(
        K,
        {k: smap.keyframes[k] for k in pose_set},
        {p: smap.points[p].position for p in point_ids},
        [(o[0], o[1], o[2]) for o in observations],
        fixed,
        plane_factors,
        cfg,
        owners,
    )
    prob.obs_info = prob.obs_info * np.array([o[3] for o in observations], dtype=float)
    return prob


def write_back(problem: BAProblem, smap: SemanticMap) -> None:
    for i, kf in enumerate(problem.pose_ids):
        if not problem.fixed[i]:
            smap.keyframes[kf] = Pose(problem.q[i], problem.t[i])
    for j, pid in enumerate(problem.point_ids):
        smap.points[pid].position = problem.X[j].copy()


def _camera_points(problem: BAProblem, q=None, t=None, X=None):
    q = problem.q if q is None else q
    t = problem.t if t is None else t
    X = problem.X if X is None else X
    R = quat_to_matrix(q)
    Ro = R[problem.obs_pose]
    Xc = np.einsum("mij,mj->mi", Ro, X[problem.obs_point]) + t[problem.obs_pose]
    return Xc, Ro


def cost_terms(problem: BAProblem, q=None, t=None, X=None) -> tuple[float, float, float]:
    """(total, reprojection, plane) robust cost; ``inf`` if a point falls behind a camera."""
    X = problem.X if X is None else X
    if len(problem.obs_pose):
        Xc, _ = _camera_points(problem, q, t, X)
        if np.any(Xc[:, 2] <= ZMIN):
            return np.inf, np.inf, 0.0
        uv = np.stack([problem.K.fx * Xc[:, 0] / Xc[:, 2] + problem.K.cx, problem.K.fy * Xc[:, 1] / Xc[:, 2] + problem.K.cy], axis=1)
        e = np.linalg.norm(uv - problem.measured, axis=1) * np.sqrt(problem.obs_info)
        c_reproj = float(np.sum(huber(e, problem.delta_reproj)[0]))
    else:
        c_reproj = 0.0
    c_plane = 0.0
    act = problem.plane_active
    if np.any(act):
        sw = np.sqrt(problem.plane_info[act])
        r = np.einsum("qi,qi->q", X[problem.plane_point[act]], problem.planes[act, :3]) + problem.planes[act, 3]
        c_plane = float(np.sum(huber(sw * r, problem.delta_plane * sw)[0]))
    return c_reproj + c_plane, c_reproj, c_plane


def total_cost(problem: BAProblem) -> float:
    return cost_terms(problem)[0]


def plane_residuals(problem: BAProblem) -> np.ndarray:
    return np.einsum("qi,qi->q", problem.X[problem.plane_point], problem.planes[:, :3]) + problem.planes[:, 3]


def gate_outliers(problem: BAProblem, cfg: BAConfig | None = None) -> list[int]:
    """Deactivate plane factors whose squared normalized raw residual exceeds the chi-squared gate.

    Every factor is re-tested, so a previously disabled factor can come
    back. Returns the indices of the factors disabled after this call.
    """
    chi2 = (cfg or BAConfig()).chi2_plane
    r = plane_residuals(problem)
    problem.plane_active = problem.plane_info * r**2 <= chi2
    return np.flatnonzero(~problem.plane_active).tolist()


@dataclass
class NormalEquations:
    Hpp: np.ndarray  # (6F, 6F) free poses
    V: np.ndarray  # (P, 3, 3) point blocks
    Wb: np.ndarray  # (M, 6, 3) pose-point coupling block per observation of a free pose
    w_pose: np.ndarray  # (M,) free-pose index of each coupling block
    w_point: np.ndarray  # (M,) point index of each coupling block
    gp: np.ndarray
    gl: np.ndarray
    free: np.ndarray  # indices of free poses

    @property
    def W(self) -> sp.csr_matrix:
        """Coupling blocks as a sparse (6F, 3P) matrix."""
        F, P = len(self.free), len(self.gl)
        rows = (6 * self.w_pose)[:, None, None] + np.arange(6)[None, :, None]
        cols = (3 * self.w_point)[:, None, None] + np.arange(3)[None, None, :]
        rows, cols = np.broadcast_arrays(rows, cols)
        return sp.coo_matrix((self.Wb.ravel(), (rows.ravel(), cols.ravel())), shape=(6 * F, 3 * P)).tocsr()

    def block_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All ordered pairs of coupling blocks that share a point."""
        if not hasattr(self, "_pairs"):
            order = np.argsort(self.w_point, kind="stable")
            pts = self.w_point[order]
            starts = np.flatnonzero(np.r_[True, pts[1:] != pts[:-1]])
            lengths = np.diff(np.r_[starts, len(pts)])
            group_len = np.repeat(lengths, lengths)
            group_start = np.repeat(starts, lengths)
            a = np.repeat(np.arange(len(pts)), group_len)
            offs = np.arange(len(a)) - np.repeat(np.cumsum(group_len) - group_len, group_len)
            b = np.repeat(group_start, group_len) + offs
            self._pairs = (order[a], order[b])
        return self._pairs


def _scatter_add(n: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Sum rows of ``vals`` into ``n`` bins (a fast ``np.add.at`` for a leading index)."""
    flat = vals.reshape(len(idx), -1)
    out = np.empty((n, flat.shape[1]))
    for k in range(flat.shape[1]):
        out[:, k] = np.bincount(idx, weights=flat[:, k], minlength=n)
    return out.reshape((n,) + vals.shape[1:])


def normal_equations(problem: BAProblem) -> NormalEquations:
    """Gauss-Newton system with IRLS (Huber) weights."""
    K = problem.K
    P = len(problem.X)
    free = np.flatnonzero(~problem.fixed)
    F = len(free)
    fidx = -np.ones(len(problem.fixed), dtype=np.intp)
    fidx[free] = np.arange(F)

    Hpp = np.zeros((F, 6, F, 6))
    V = np.zeros((P, 3, 3))
    gp = np.zeros((F, 6))
    gl = np.zeros((P, 3))
    Wb = np.zeros((0, 6, 3))
    w_pose = np.zeros(0, dtype=np.intp)
    w_point = np.zeros(0, dtype=np.intp)

    if len(problem.obs_pose):
        Xc, Ro = _camera_points(problem)
        Jproj = _projection_jacobian(K, Xc)
        uv = np.stack([K.fx * Xc[:, 0] / Xc[:, 2] + K.cx, K.fy * Xc[:, 1] / Xc[:, 2] + K.cy], axis=1)
        e = uv - problem.measured
        en = np.linalg.norm(e, axis=1) * np.sqrt(problem.obs_info)
        _, rw = huber(en, problem.delta_reproj)
        w = rw * problem.obs_info

        Jl = Jproj @ Ro  # (M, 2, 3)
        JlT_w = np.swapaxes(Jl, 1, 2) * w[:, None, None]
        V += _scatter_add(P, problem.obs_point, JlT_w @ Jl)
        gl += _scatter_add(P, problem.obs_point, np.einsum("mij,mj->mi", JlT_w, e))

        fo = fidx[problem.obs_pose]
        m = fo >= 0
        if np.any(m):
            Jc = np.concatenate([-Jproj[m] @ skew(Xc[m]), Jproj[m]], axis=2)  # (M', 2, 6)
            JcT_w = np.swapaxes(Jc, 1, 2) * w[m, None, None]
            blocks = JcT_w @ Jc
            Hpp[np.arange(F), :, np.arange(F), :] = _scatter_add(F, fo[m], blocks)
            gp += _scatter_add(F, fo[m], np.einsum("mij,mj->mi", JcT_w, e[m]))
            Wb = JcT_w @ Jl[m]  # (M', 6, 3)
            w_pose, w_point = fo[m], problem.obs_point[m]

    act = problem.plane_active
    if np.any(act):
        n = problem.planes[act, :3]
        idx = problem.plane_point[act]
        sw = np.sqrt(problem.plane_info[act])
        r = np.einsum("qi,qi->q", problem.X[idx], n) + problem.planes[act, 3]
        _, hw = huber(sw * r, problem.delta_plane * sw)
        wq = hw * problem.plane_info[act]
        V += _scatter_add(P, idx, wq[:, None, None] * n[:, :, None] * n[:, None, :])
        gl += _scatter_add(P, idx, (wq * r)[:, None] * n)

    return NormalEquations(Hpp.reshape(6 * F, 6 * F), V, Wb, w_pose, w_point, gp.ravel(), gl, free)


def _damped_point_inverse(V: np.ndarray, lam: float) -> np.ndarray:
    d = np.diagonal(V, axis1=1, axis2=2)
    Vd = V + lam * np.einsum("pi,ij->pij", np.maximum(d, 1e-12), np.eye(3))
    return np.linalg.inv(Vd)


def solve_schur(ne: NormalEquations, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Damped step (pose part, point part) via the Schur complement on points."""
    Vinv = _damped_point_inverse(ne.V, lam)
    gl = ne.gl
    if not np.all(np.isfinite(Vinv)):
        raise np.linalg.LinAlgError("singular point block")
    P = len(gl)
    if len(ne.free) == 0:
        return np.zeros(0), -np.einsum("pij,pj->pi", Vinv, gl)
    F = len(ne.free)
    # reduced camera system S = Hpp - W V^-1 W^T, accumulated per pair of
    # observations of the same point
    WV = ne.Wb @ Vinv[ne.w_point]
    a, b = ne.block_pairs()
    blocks = WV[a] @ np.swapaxes(ne.Wb[b], 1, 2)
    red = _scatter_add(F * F, ne.w_pose[a] * F + ne.w_pose[b], blocks)
    S = ne.Hpp - red.reshape(F, F, 6, 6).transpose(0, 2, 1, 3).reshape(6 * F, 6 * F)
    S[np.diag_indices_from(S)] += lam * np.maximum(np.diag(ne.Hpp), 1e-12)
    rhs = -ne.gp + _scatter_add(F, ne.w_pose, (WV @ gl[ne.w_point][:, :, None])[..., 0]).ravel()
    c, low = scipy.linalg.cho_factor(S)
    dp = scipy.linalg.cho_solve((c, low), rhs)
    back = _scatter_add(P, ne.w_point, (np.swapaxes(ne.Wb, 1, 2) @ dp.reshape(F, 6)[ne.w_pose][:, :, None])[..., 0])
    dl = -(Vinv @ (gl + back)[:, :, None])[..., 0]
    return dp, dl


def solve_dense(ne: NormalEquations, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Same step as ``solve_schur`` from the full dense system (reference path)."""
    F6 = ne.Hpp.shape[0]
    P = len(ne.gl)
    H = np.zeros((F6 + 3 * P, F6 + 3 * P))
    H[:F6, :F6] = ne.Hpp
    H[F6:, F6:] = scipy.linalg.block_diag(*ne.V) if P else np.zeros((0, 0))
    Wd = ne.W.toarray()
    H[:F6, F6:] = Wd
    H[F6:, :F6] = Wd.T
    d = np.maximum(np.diag(H), 1e-12)
    H[np.diag_indices_from(H)] += lam * d
    g = np.concatenate([ne.gp, ne.gl.ravel()])
    x = scipy.linalg.solve(H, -g, assume_a="pos")
    return x[:F6], x[F6:].reshape(P, 3)


@dataclass
class TraceRow:
    iteration: int
    cost: float
    reprojection: float
    plane: float
    lam: float
    accepted: bool


@dataclass
class LMResult:
    trace: list[TraceRow] = field(default_factory=list)
    initial_cost: float = 0.0
    final_cost: float = 0.0
    iterations: int = 0
    reason: str = ""


def _apply_step(problem: BAProblem, ne: NormalEquations, dp: np.ndarray, dl: np.ndarray):
    q, t = problem.q.copy(), problem.t.copy()
    if len(ne.free):
        dq, dt = se3_exp_batch(dp.reshape(-1, 6))
        f = ne.free
        Rd = quat_to_matrix(dq)
        t[f] = np.einsum("fij,fj->fi", Rd, t[f]) + dt
        q[f] = quat_normalize(quat_multiply(dq, q[f]))
    return q, t, problem.X + dl


def optimize_lm(problem: BAProblem, cfg: BAConfig | None = None, max_iterations: int | None = None, start_iteration: int = 0) -> LMResult:
    """Levenberg-Marquardt on the robust objective; updates ``problem`` in place.

    Rejected steps leave the parameters untouched and raise the damping, so
    the recorded cost never increases.
    """
    cfg = cfg or BAConfig()
    if not np.any(problem.fixed):
        raise ValueError("problem has no fixed pose (gauge)")
    max_it = cfg.max_iterations if max_iterations is None else max_iterations
    solve = solve_schur if cfg.solver == "schur" else solve_dense
    cost, c_r, c_p = cost_terms(problem)
    res = LMResult(initial_cost=cost, final_cost=cost)
    lam = cfg.lambda0
    ne = None
    it = 0
    while it < max_it:
        if cost <= 0.0:
            res.reason = "zero cost"
            break
        if ne is None:
            ne = normal_equations(problem)
        it += 1
        try:
            dp, dl = solve(ne, lam)
            ok = np.all(np.isfinite(dp)) and np.all(np.isfinite(dl))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            ok = False
        if not ok:
            lam *= cfg.lambda_up
            res.trace.append(TraceRow(start_iteration + it, cost, c_r, c_p, lam, False))
            if lam > cfg.lambda_max:
                raise SingularNormalEquations(f"damped system unsolvable at lambda={lam:.3g}")
            continue
        step = float(np.sqrt(dp @ dp + np.sum(dl * dl)))
        if step < cfg.step_tol:
            res.trace.append(TraceRow(start_iteration + it, cost, c_r, c_p, lam, False))
            res.reason = "small step"
            break
        q, t, X = _apply_step(problem, ne, dp, dl)
        new_cost, n_r, n_p = cost_terms(problem, q, t, X)
        if new_cost < cost:
            problem.q, problem.t, problem.X = q, t, X
            rel = (cost - new_cost) / cost
            cost, c_r, c_p = new_cost, n_r, n_p
            lam = max(lam * cfg.lambda_down, 1e-15)
            ne = None
            res.trace.append(TraceRow(start_iteration + it, cost, c_r, c_p, lam, True))
            if rel < cfg.rel_tol:
                res.reason = "relative decrease"
                break
        else:
            lam *= cfg.lambda_up
            res.trace.append(TraceRow(start_iteration + it, cost, c_r, c_p, lam, False))
            if lam > cfg.lambda_max:
                res.reason = "damping limit"
                break
    else:
        res.reason = "max iterations"
    res.iterations = it
    res.final_cost = cost
    return res


def run_planar_ba(problem: BAProblem, cfg: BAConfig | None = None, max_iterations: int | None = None) -> LMResult:
    """LM rounds separated by chi-squared gating of the plane factors.

    The first round runs with every plane factor active; before each later
    round the gate is re-evaluated on the current estimate. The iteration
    budget is shared by all rounds.
    """
    cfg = cfg or BAConfig()
    max_it = cfg.max_iterations if max_iterations is None else max_iterations
    rounds = max(1, cfg.gate_rounds) if problem.n_plane_factors else 1
    total = LMResult()
    for r in range(rounds):
        if r > 0:
            gate_outliers(problem, cfg)
        budget = -(-(max_it - total.iterations) // (rounds - r))
        res = optimize_lm(problem, cfg, budget, start_iteration=total.iterations)
        if r == 0:
            total.initial_cost = res.initial_cost
        total.trace.extend(res.trace)
        total.iterations += res.iterations
        total.final_cost = res.final_cost
        total.reason = res.reason
    return total


def write_trace_csv(path, trace: list[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "total_cost", "reprojection_cost", "plane_cost", "lambda", "accepted"])
        for row in trace:
            w.writerow([row.iteration, repr(row.cost), repr(row.reprojection), repr(row.plane), repr(row.lam), int(row.accepted)])


def read_trace_csv(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TraceRow(int(r["iteration"]), float(r["total_cost"]), float(r["reprojection_cost"]), float(r["plane_cost"]), float(r["lambda"]), bool(int(r["accepted"])))
        for r in rows
    ]


def mean_abs_plane_residual(problem: BAProblem, only_active: bool = False) -> float:
    r = np.abs(plane_residuals(problem))
    if only_active:
        r = r[problem.plane_active]
    return float(r.mean()) if len(r) else 0.0
