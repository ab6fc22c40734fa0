import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterslam.errors import DegenerateUpdate, OutOfBounds
from clusterslam.semantic_fusion import (
    InstanceMap,
    InstanceTrackState,
    ProbabilityMap,
    argmax_class,
    bayes_update,
    mask_iou,
    observe_point,
    pairwise_iou,
    pixel_index,
    track_instances,
    uniform,
)


def one_pixel_map(dist):
    return ProbabilityMap(np.asarray(dist, dtype=float).reshape(1, 1, -1))


def test_bayes_update_examples():
    np.testing.assert_allclose(bayes_update(uniform(3), [0.6, 0.3, 0.1]), [0.6, 0.3, 0.1], atol=1e-15)
    # oracle: (0.36, 0.09, 0.01) / 0.46
    np.testing.assert_allclose(bayes_update([0.6, 0.3, 0.1], [0.6, 0.3, 0.1]), [0.36 / 0.46, 0.09 / 0.46, 0.01 / 0.46], atol=1e-15)
    with pytest.raises(DegenerateUpdate) as exc:
        bayes_update([1, 0, 0], [0, 1, 0])
    np.testing.assert_array_equal(exc.value.prior, [1, 0, 0])


def test_observe_point_examples():
    hot = one_pixel_map([0, 0, 1.0])
    out = observe_point(uniform(3), hot, (0.5, 0.5))
    assert argmax_class(out) == 2
    assert out[2] > 1 - 1e-5
    d = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(observe_point(d, one_pixel_map(uniform(3)), (0, 0)), d, atol=1e-15)


def test_twenty_weak_observations_converge():
    obs = np.array([0.2, 0.6, 0.2])
    pm = one_pixel_map(obs)
    d = uniform(3)
    for _ in range(20):
        d = observe_point(d, pm, (0, 0))
    assert argmax_class(d) == 1
    assert d[1] > 0.999


def test_argmax_examples():
    assert argmax_class([0.1, 0.8, 0.1]) == 1
    assert argmax_class([0.5, 0.5, 0.0]) == 0
    assert argmax_class(np.eye(5)[4]) == 4


def test_probability_floor_applied():
    pm = ProbabilityMap(np.array([[[1.0, 0.0, 0.0]]]))
    p = pm.at((0, 0))
    assert p.min() > 0
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_label_map_matches_dense():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, size=(6, 7))
    lm = ProbabilityMap.from_labels(labels, 4, alpha=0.8)
    for r in range(6):
        for c in range(7):
            np.testing.assert_allclose(lm.at((c + 0.5, r + 0.5)), lm.probs[r, c], atol=1e-15)
    np.testing.assert_allclose(lm.probs.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all((lm.probs >= 0) & (lm.probs <= 1))


def test_pixel_out_of_bounds():
    with pytest.raises(OutOfBounds):
        pixel_index((10.0, 2.0), 10, 10)
    with pytest.raises(OutOfBounds):
        pixel_index((-0.1, 2.0), 10, 10)
    assert pixel_index((9.99, 0.0), 10, 10) == (0, 9)


def test_mask_iou_examples():
    a = np.zeros((20, 20), bool)
    a[:10, :10] = True
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, ~a) == 0.0
    b = np.zeros_like(a)
    b.flat[np.flatnonzero(a.ravel())[:70]] = True
    b[15:18, 10:20] = True  # 30 new pixels
    assert np.count_nonzero(b) == 100
    assert mask_iou(a, b) == pytest.approx(70 / 130)


def test_pairwise_iou_matches_masks():
    rng = np.random.default_rng(3)
    cur = rng.integers(0, 4, size=(30, 30))
    prev = rng.integers(0, 5, size=(30, 30))
    got = pairwise_iou(cur, prev)
    for (c, p), v in got.items():
        assert v == pytest.approx(mask_iou(cur == c, prev == p))
    for c in range(1, 4):
        for p in range(1, 5):
            if np.any((cur == c) & (prev == p)):
                assert (c, p) in got


def box(shape, r0, r1, c0, c1, value=1):
    m = np.zeros(shape, dtype=np.int64)
    m[r0:r1, c0:c1] = value
    return m


def test_tracker_static_object_keeps_id():
    st_ = InstanceTrackState()
    ids = [st_.track(InstanceMap(box((20, 20), 2, 8, 2, 8, value=v)), {v: 3})[v] for v in (5, 9, 11)]
    assert ids[0] == ids[1] == ids[2]


def test_tracker_falls_back_two_frames():
    shape = (40, 40)
    st_ = InstanceTrackState()
    first = st_.track(InstanceMap(box(shape, 0, 10, 0, 10, value=1)), {1: 2})[1]
    st_.track(InstanceMap(np.zeros(shape, np.int64)), {})
    # IOU 0.5 against the frame before last: 10x10 vs 10x10 shifted by a third
    cur = box(shape, 0, 10, 0, 10, value=4)
    cur = np.roll(cur, 10 // 3 + 0, axis=1)
    iou = mask_iou(cur > 0, box(shape, 0, 10, 0, 10) > 0)
    assert 0.4 <= iou < 0.65
    assert st_.track(InstanceMap(cur), {4: 2})[4] == first


def test_tracker_long_absence_mints_fresh_id():
    shape = (20, 20)
    st_ = InstanceTrackState()
    first = st_.track(InstanceMap(box(shape, 2, 8, 2, 8)), {1: 2})[1]
    for _ in range(10):
        st_.track(InstanceMap(np.zeros(shape, np.int64)), {})
    again = st_.track(InstanceMap(box(shape, 2, 8, 2, 8)), {1: 2})[1]
    assert again != first


def test_tracker_class_mismatch_not_matched():
    st_ = InstanceTrackState()
    a = st_.track(InstanceMap(box((10, 10), 0, 5, 0, 5)), {1: 2})[1]
    b = st_.track(InstanceMap(box((10, 10), 0, 5, 0, 5)), {1: 3})[1]
    assert a != b


def test_track_instances_wrapper():
    st_ = InstanceTrackState()
    st2, ids = track_instances(st_, InstanceMap(box((10, 10), 0, 5, 0, 5, value=7)), lambda r: 1)
    assert st2 is st_ and ids == {7: 1}


def test_relabel_unmapped_to_zero():
    im = InstanceMap(np.array([[0, 1], [2, 3]]))
    np.testing.assert_array_equal(im.relabel({1: 10, 3: 30}).ids, [[0, 10], [0, 30]])


dists = st.integers(2, 8).flatmap(
    lambda c: st.lists(st.lists(st.floats(0.01, 1.0), min_size=c, max_size=c), min_size=2, max_size=20)
)


@settings(max_examples=150, deadline=None)
@given(obs=dists, seed=st.integers(0, 1000))
def test_fold_order_invariant(obs, seed):
    obs = [np.array(o) / np.sum(o) for o in obs]
    perm = np.random.default_rng(seed).permutation(len(obs))
    a = uniform(len(obs[0]))
    b = a.copy()
    for o in obs:
        a = bayes_update(a, o)
    for i in perm:
        b = bayes_update(b, obs[i])
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert a.sum() == pytest.approx(1.0, abs=1e-12)
