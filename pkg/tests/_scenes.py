"""Small hand-built BA problems shared by the optimizer tests."""

import numpy as np

from clusterslam.geometry import CameraIntrinsics, Plane, Pose, project, retract
from clusterslam.planar_ba import BAConfig, make_problem
from clusterslam.simulator import look_at

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
FLOOR = Plane([0.0, 0.0, 1.0, 0.0])


def toy_scene(seed, n_plane=60, n_free=30, n_cams=6):
    rng = np.random.default_rng(seed)
    poses = {}
    for k in range(n_cams):
        a = -0.6 + 1.2 * k / max(1, n_cams - 1)
        poses[k] = look_at((2.0 * np.sin(a), -2.0 * np.cos(a), 1.5), (0.0, 0.0, 0.1))
    on = np.column_stack([rng.uniform(-0.6, 0.6, (n_plane, 2)), np.zeros(n_plane)])
    off = rng.uniform([-0.4, -0.4, 0.1], [0.4, 0.4, 0.6], (n_free, 3))
    X = np.vstack([on, off])
    return poses, {i: X[i] for i in range(len(X))}, list(range(n_plane))


def observe(poses, points, pixel_sigma=0.0, seed=0):
    rng = np.random.default_rng(seed + 1000)
    obs = []
    for k in sorted(poses):
        for pid in sorted(points):
            uv = project(poses[k], K, points[pid])
            if K.in_image(uv):
                obs.append((k, pid, uv + rng.normal(0, pixel_sigma, 2) if pixel_sigma else uv))
    return obs


def perturbed_problem(seed, pose_noise=0.01, point_noise=0.01, pixel_sigma=0.5, planes=True, cfg=None, plane=FLOOR):
    """Toy scene with noisy measurements and a perturbed initial guess.

    Poses 0 and 1 stay at the truth and are fixed. Returns the problem and
    the ground-truth (poses, points).
    """
    poses, points, on_plane = toy_scene(seed)
    obs = observe(poses, points, pixel_sigma, seed)
    rng = np.random.default_rng(seed + 2000)
    init_poses = {k: p if k < 2 else retract(p, rng.normal(0, pose_noise, 6)) for k, p in poses.items()}
    init_points = {i: X + rng.normal(0, point_noise, 3) for i, X in points.items()}
    factors = [(i, plane) for i in on_plane] if planes else []
    prob = make_problem(K, init_poses, init_points, obs, {0, 1}, factors, cfg or BAConfig())
    return prob, (poses, points)


def exact_problem(seed, planes=True, cfg=None):
    poses, points, on_plane = toy_scene(seed)
    obs = observe(poses, points)
    factors = [(i, FLOOR) for i in on_plane] if planes else []
    return make_problem(K, poses, points, obs, {0}, factors, cfg or BAConfig())
