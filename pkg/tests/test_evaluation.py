import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterslam.errors import DegenerateConfiguration, NoMatches
from clusterslam.evaluation import (
    Trajectory,
    align_similarity,
    associate,
    ate_rmse,
    normal_angle_stats,
    read_tum,
    write_tum,
)
from clusterslam.geometry import Plane, Pose, quat_to_matrix, se3_exp, so3_exp


def random_traj(rng, n=50, t0=0.0):
    poses = [se3_exp(np.concatenate([rng.normal(0, 0.5, 3), rng.normal(0, 2, 3)])) for _ in range(n)]
    return Trajectory(t0 + np.arange(n) * 0.1, poses)


def similarity_copy(traj, s, R, t):
    return Trajectory(traj.timestamps, [Pose(p.q, s * R @ p.t + t) for p in traj.poses])


def test_associate_examples():
    rng = np.random.default_rng(0)
    a = random_traj(rng, 10)
    assert associate(a, a) == [(i, i) for i in range(10)]
    b = Trajectory(a.timestamps + 0.01, a.poses)
    assert len(associate(a, b, 0.02)) == 10
    c = Trajectory(a.timestamps + 100, a.poses)
    with pytest.raises(NoMatches):
        associate(a, c)


def test_align_examples():
    rng = np.random.default_rng(1)
    gt = rng.normal(size=(30, 3))
    r = align_similarity(gt, gt)
    assert r.scale == pytest.approx(1.0) and r.rmse < 1e-12
    np.testing.assert_allclose(r.rotation, np.eye(3), atol=1e-12)
    R = quat_to_matrix(so3_exp(rng.normal(size=3)))
    t = rng.normal(size=3)
    est = 2.0 * gt @ R.T + t
    r = align_similarity(est, gt)
    # est maps to gt by the inverse similarity
    assert r.scale == pytest.approx(0.5, abs=1e-9)
    np.testing.assert_allclose(r.rotation, R.T, atol=1e-9)
    np.testing.assert_allclose(r.translation, -0.5 * R.T @ t, atol=1e-9)
    assert r.rmse < 1e-9


def test_align_noise_matches_direct_residuals():
    rng = np.random.default_rng(2)
    gt = rng.normal(size=(200, 3))
    noise = rng.normal(0, 0.01, gt.shape)
    est = gt + noise
    r = align_similarity(est, gt)
    direct = np.sqrt(np.mean(np.sum((r.apply(est) - gt) ** 2, axis=1)))
    assert r.rmse == pytest.approx(direct, rel=1e-12)
    # the identity is a feasible alignment, so the optimum cannot be worse than the raw noise
    raw = np.sqrt(np.mean(np.sum(noise**2, axis=1)))
    assert 0.95 * raw < r.rmse <= raw


def test_align_degenerate():
    with pytest.raises(DegenerateConfiguration):
        align_similarity(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfiguration):
        align_similarity(line, line)


def test_single_offset_closed_form():
    rng = np.random.default_rng(3)
    gt = random_traj(rng, 100)
    est = Trajectory(gt.timestamps, list(gt.poses))
    est.poses[17] = Pose(gt.poses[17].q, gt.poses[17].t + np.array([0.1, 0, 0]))
    assert ate_rmse(est, gt, align="none") == pytest.approx(0.01, abs=1e-15)
    assert ate_rmse(gt, gt) <= 1e-12


def test_normal_angle_examples():
    p = Plane([0, 0, 1, -1])
    assert normal_angle_stats([p, p]) == {"max": 0.0, "min": 0.0, "median": 0.0}
    q = Plane([np.sin(np.deg2rad(1)), 0, np.cos(np.deg2rad(1)), 0])
    assert normal_angle_stats([p, q])["median"] == pytest.approx(1.0, abs=1e-9)
    assert normal_angle_stats([p, p.flipped()])["max"] == pytest.approx(0.0, abs=1e-6)


def test_tum_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    tr = random_traj(rng, 12)
    write_tum(tmp_path / "t.txt", tr)
    back = read_tum(tmp_path / "t.txt")
    np.testing.assert_array_equal(back.timestamps, np.round(tr.timestamps, 6))
    for a, b in zip(tr.poses, back.poses):
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_allclose(a.q, b.q, atol=1e-15)


def test_tum_rejects_malformed(tmp_path):
    (tmp_path / "bad.txt").write_text("# header\n0.0 1 2 3\n")
    with pytest.raises(ValueError):
        read_tum(tmp_path / "bad.txt")


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), log_s=st.floats(-3, 3))
def test_similarity_invariance(seed, log_s):
    rng = np.random.default_rng(seed)
    gt = random_traj(rng, 40)
    R = quat_to_matrix(so3_exp(rng.normal(0, 2, 3)))
    copy = similarity_copy(gt, np.exp(log_s), R, rng.normal(0, 10, 3))
    assert ate_rmse(copy, gt) <= 1e-9
