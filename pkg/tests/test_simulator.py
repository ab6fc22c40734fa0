import numpy as np
import pytest
from scipy.stats import binom

from clusterslam.errors import InvalidSpec
from clusterslam.geometry import project
from clusterslam.simulator import (
    DEFAULT_CLASSES,
    DEFAULT_THINGS,
    NoiseSpec,
    SceneSpec,
    desk_scene,
    generate_scene,
    initial_track_positions,
    parallel_planes_scene,
    perturb_initialization,
    render_frame,
    spec_to_dict,
    track_ids,
    track_point,
    write_spec,
)

INTR = {"fx": 400.0, "fy": 400.0, "cx": 319.5, "cy": 239.5, "width": 640, "height": 480}
TRAJ = {"frames": 5, "waypoints": [{"center": (0, -2, 1.5), "target": (0, 0, 0)}, {"center": (0.3, -2, 1.5), "target": (0, 0, 0)}]}


def floor_spec(count=500, **noise):
    return SceneSpec.from_dict(
        {
            "intrinsics": INTR,
            "planar_objects": [{"cls": "floor", "center": (0, 0, 0), "normal": (0, 0, 1), "extent": (1.5, 1.5), "count": count}],
            "trajectory": TRAJ,
            "noise": noise,
        },
        DEFAULT_CLASSES,
        DEFAULT_THINGS,
    )


def test_floor_points_on_plane():
    b = generate_scene(floor_spec(), 0)
    assert len(b.points) == 500
    assert np.all(b.points[:, 2] == 0)


def test_determinism():
    a, b = generate_scene(desk_scene(), 3), generate_scene(desk_scene(), 3)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.descriptors, b.descriptors)
    fa, fb = render_frame(a, 4), render_frame(b, 4)
    np.testing.assert_array_equal(fa.pixels, fb.pixels)
    np.testing.assert_array_equal(fa.labels, fb.labels)
    np.testing.assert_array_equal(fa.instances, fb.instances)
    assert not np.array_equal(generate_scene(desk_scene(), 4).points, a.points)


def test_outlier_count_binomial():
    counts = []
    for seed in range(20):
        b = generate_scene(floor_spec(100, outlier_rate=0.3), seed)
        n_out = int(b.is_outlier.sum())
        assert np.count_nonzero(b.points[:, 2] != 0) == n_out
        counts.append(n_out)
    lo, hi = binom.ppf([0.0005, 0.9995], 100, 0.3)
    assert all(lo <= c <= hi for c in counts)
    assert abs(np.mean(counts) - 30) < 3


def test_zero_noise_render():
    b = generate_scene(floor_spec(pixel_sigma=0.0), 1)
    fr = render_frame(b, 2)
    exact = np.array([project(b.poses[2], b.K, b.points[i]) for i in fr.point_ids])
    np.testing.assert_allclose(fr.pixels, exact, atol=1e-9)
    rows, cols = np.floor(fr.pixels[:, 1]).astype(int), np.floor(fr.pixels[:, 0]).astype(int)
    assert np.all(fr.labels[rows, cols] == DEFAULT_CLASSES.index("floor"))
    pm = fr.probability_map(len(DEFAULT_CLASSES))
    assert np.argmax(pm.at(fr.pixels[0])) == DEFAULT_CLASSES.index("floor")


def test_label_error_frequency():
    b = generate_scene(desk_scene(label_error=0.2), 0)
    clean = render_frame(b, 3, NoiseSpec(pixel_sigma=0.0, label_error=0.0))
    noisy = render_frame(b, 3, NoiseSpec(pixel_sigma=0.0, label_error=0.2))
    freq = np.mean(clean.labels == noisy.labels)
    assert abs(freq - 0.8) < 0.005


def test_churn_one_gives_fresh_ids_every_frame():
    b = generate_scene(desk_scene(churn=1.0), 0)
    seen = set()
    for f in range(b.n_frames):
        ids = set(np.unique(render_frame(b, f).instances).tolist()) - {0}
        assert not ids & seen
        seen |= ids


def test_track_ids():
    b = generate_scene(desk_scene(), 0)
    n = len(b.points)
    pts = np.arange(n)
    np.testing.assert_array_equal(track_ids(b, 0, pts, 0), pts)
    t0 = track_ids(b, 0, pts, 5)
    np.testing.assert_array_equal(track_point(b, t0), pts)
    # each point changes track exactly once every 5 frames
    changes = sum(np.count_nonzero(track_ids(b, f, pts, 5) != track_ids(b, f + 1, pts, 5)) for f in range(5))
    assert changes == n
    init = initial_track_positions(b, t0[:10], 0.0)
    for tid in t0[:10]:
        np.testing.assert_array_equal(init[int(tid)], b.points[int(tid) % n])


def test_perturb_initialization_bounds():
    b = generate_scene(desk_scene(), 0)
    poses, pts = perturb_initialization(b, (0.0, 0.0), 0.0)
    assert all(p is q for p, q in zip(poses, b.poses))
    np.testing.assert_array_equal(pts, b.points)
    poses, _ = perturb_initialization(b, (0.01, 1.0), 0.0, seed=3)
    for p, g in zip(poses, b.poses):
        assert np.linalg.norm(p.center() - g.center()) <= 0.01 + 1e-12
        dR = p.R @ g.R.T
        ang = np.degrees(np.arccos(np.clip((np.trace(dR) - 1) / 2, -1, 1)))
        assert ang <= 1.0 + 1e-9


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        floor_spec(-1)
    with pytest.raises(InvalidSpec):
        floor_spec(label_error=1.5)
    with pytest.raises(InvalidSpec):
        SceneSpec.from_dict({"intrinsics": INTR}, DEFAULT_CLASSES)


def test_spec_yaml_round_trip(tmp_path):
    spec = parallel_planes_scene()
    write_spec(spec, tmp_path / "s.yaml")
    back = SceneSpec.from_yaml(tmp_path / "s.yaml")
    assert spec_to_dict(back) == spec_to_dict(spec)
