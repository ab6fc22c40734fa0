import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterslam.cluster_map import Cluster, SemanticMap
from clusterslam.config import load_class_table
from clusterslam.errors import DegenerateGeometry, NoModel
from clusterslam.geometry import Plane
from clusterslam.plane_fitting import (
    PlaneFitResult,
    RansacConfig,
    accept_plane,
    cluster_needs_fit,
    fit_cluster,
    fit_plane_svd,
    prune_far_points,
    ransac_plane,
    required_iterations,
)

TABLE = load_class_table(None)


def angle_deg(n, m):
    return np.degrees(np.arccos(min(1.0, abs(float(n @ m)))))


def test_svd_examples():
    pl = fit_plane_svd([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
    np.testing.assert_allclose(np.abs(pl.pi), [0, 0, 1, 0], atol=1e-12)
    rng = np.random.default_rng(0)
    ab = rng.uniform(-1, 1, (100, 2))
    X = np.column_stack([ab, 1 - ab.sum(axis=1)])
    np.testing.assert_allclose(fit_plane_svd(X).pi, np.array([1, 1, 1, -1]) / 2, atol=1e-9)
    with pytest.raises(DegenerateGeometry):
        fit_plane_svd([(0, 0, 0), (1, 1, 1), (2, 2, 2)])


def test_ransac_low_noise():
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.uniform(-1, 1, (200, 2)), rng.normal(0, 0.001, 200)])
    fit = ransac_plane(X, RansacConfig(threshold_m=0.01), seed=0)
    assert angle_deg(fit.plane.normal, np.array([0, 0, 1.0])) < 0.5
    assert fit.inlier_count >= 190


def test_ransac_with_outliers():
    rng = np.random.default_rng(2)
    n = np.array([0.3, -0.2, 1.0])
    n /= np.linalg.norm(n)
    u = np.cross(n, [1, 0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    ab = rng.uniform(-0.5, 0.5, (140, 2))
    inl = 0.5 + ab[:, :1] * u + ab[:, 1:] * v + rng.normal(0, 0.002, (140, 1)) * n
    out = rng.uniform(0, 1, (60, 3))
    fit = ransac_plane(np.vstack([inl, out]), RansacConfig(), seed=5)
    assert angle_deg(fit.plane.normal, n) < 1.0


def test_ransac_random_points_no_model():
    cfg = RansacConfig(threshold_m=0.001)
    for seed in range(5):
        X = np.random.default_rng(100 + seed).uniform(0, 1, (10, 3))
        with pytest.raises(NoModel):
            ransac_plane(X, cfg, seed=seed)


def test_ransac_deterministic():
    rng = np.random.default_rng(3)
    X = np.column_stack([rng.uniform(-1, 1, (150, 2)), rng.normal(0, 0.005, 150)])
    X = np.vstack([X, rng.uniform(-1, 1, (50, 3))])
    a = ransac_plane(X, RansacConfig(), seed=11)
    b = ransac_plane(X, RansacConfig(), seed=11)
    np.testing.assert_array_equal(a.plane.pi, b.plane.pi)
    np.testing.assert_array_equal(a.inliers, b.inliers)


def test_required_iterations():
    assert required_iterations(1.0, 0.99) == 1.0
    # oracle: log(0.001) / log(1 - 0.7^3)
    assert required_iterations(0.7, 0.999) == pytest.approx(np.log(0.001) / np.log(1 - 0.343))


def fake_fit(n):
    return PlaneFitResult(Plane([0, 0, 1, 0]), np.arange(n), 0.001)


def test_accept_plane_thresholds():
    cfg = RansacConfig()
    kb = Cluster(1, TABLE.by_name("keyboard").id, 1, True)
    assert not accept_plane(kb, fake_fit(49), cfg, "keyboard")
    assert accept_plane(kb, fake_fit(50), cfg, "keyboard")
    fl = Cluster(2, TABLE.by_name("floor").id, 0, True)
    assert accept_plane(fl, fake_fit(120), cfg, "floor")


def planar_cluster(Z, obs=2):
    smap = SemanticMap(TABLE)
    cl = Cluster(1, TABLE.by_name("floor").id, 0, True)
    for i, z in enumerate(Z):
        smap.add_point(i, (i * 0.01, (i * 7 % 13) * 0.01, z))
        smap.points[i].observations = [None] * obs
        cl.members[i] = None
    smap.clusters[1] = cl
    return smap, cl


def test_prune_examples():
    smap, cl = planar_cluster(np.zeros(20))
    cl.inlier_rms = 0.01
    assert prune_far_points(cl, smap, Plane([0, 0, 1, 0]), 3.0) == []
    smap.points[5].position[2] = 0.1
    assert prune_far_points(cl, smap, Plane([0, 0, 1, 0]), 3.0) == [5]
    cl.plane = Plane([0, 0, 1, 0])
    assert 5 in cl.members  # still a member, only unconstrained
    assert 5 not in cl.constrained_ids() and len(cl.constrained_ids()) == 19


def test_fit_cluster_installs_plane():
    rng = np.random.default_rng(4)
    smap, cl = planar_cluster(rng.normal(0, 0.002, 150))
    assert cluster_needs_fit(cl, smap, RansacConfig())
    assert fit_cluster(cl, smap, RansacConfig(), seed=0)
    assert angle_deg(cl.plane.normal, np.array([0, 0, 1.0])) < 2.0
    assert cl.inlier_count >= 140
    assert not cluster_needs_fit(cl, smap, RansacConfig())


def test_fit_cluster_ignores_single_view_points():
    smap, cl = planar_cluster(np.zeros(150), obs=1)
    assert not fit_cluster(cl, smap, RansacConfig())
    assert fit_cluster(cl, smap, RansacConfig(min_observations=0))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_exact_data_recovers_plane(seed):
    rng = np.random.default_rng(seed)
    pl = Plane(rng.normal(size=4))
    n = pl.normal
    u = np.cross(n, rng.normal(size=3))
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    base = -pl.pi[3] / pl.normal_scale * n
    ab = rng.uniform(-1, 1, (50, 2))
    X = base + ab[:, :1] * u + ab[:, 1:] * v
    fit = fit_plane_svd(X)
    assert abs(fit.normal @ n) >= 1 - 1e-12
    assert abs(abs(fit.pi @ pl.pi) - 1) <= 1e-9
