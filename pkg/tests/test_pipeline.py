import json

import numpy as np
import pytest

from clusterslam.config import config_from_dict
from clusterslam.errors import ConfigError
from clusterslam.formats import read_ply, sha256_file
from clusterslam.pipeline import (
    FIXED_ARTIFACTS,
    SyntheticDataset,
    compare_modes,
    export_artifacts,
    export_dataset,
    run_pipeline,
    scene_spec_from_input,
)

SMALL = {"preset": "desk", "frames": 8}
CLEAN = {**SMALL, "pixel_sigma": 0.0, "label_error": 0.0, "churn": 0.0}
NO_INIT_NOISE = {"pose_m": 0.0, "pose_deg": 0.0, "point_m": 0.0}


def cfg(**kw):
    d = {"mode": "planar_ba", "input": {"synthetic": SMALL}, "seeds": [0]}
    d.update(kw)
    return config_from_dict(d)


@pytest.mark.parametrize("mode", ["plain_ba", "planar_ba"])
def test_zero_noise_scene_is_exact(mode):
    rep = run_pipeline(cfg(mode=mode, input={"synthetic": CLEAN}, init=NO_INIT_NOISE))
    assert rep.ate[0] <= 1e-9


def test_no_planar_classes_degrades_to_plain():
    cmp = compare_modes(cfg(planar_classes=[]))
    assert cmp.planar.plane_inventory == []
    assert cmp.plain.ate == cmp.planar.ate
    assert cmp.percent_change == 0.0


def test_planar_run_finds_planes():
    rep = run_pipeline(cfg())
    classes = sorted(p["class"] for p in rep.plane_inventory)
    assert "floor" in classes
    assert rep.ate[0] is not None and rep.ate[0] < 0.01


def test_unknown_planar_class_rejected_at_startup():
    with pytest.raises(ConfigError):
        cfg(planar_classes=["sofa"])
    with pytest.raises(ConfigError):
        cfg(ransac={"min_inliers": {"sofa": 3}})


def test_scene_class_missing_from_table():
    table = [{"name": "unlabeled", "kind": "void"}, {"name": "floor", "kind": "stuff", "planar": True}]
    with pytest.raises(ConfigError):
        run_pipeline(cfg(class_table=table))


def test_config_validation():
    with pytest.raises(ConfigError):
        config_from_dict({"input": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"input": {"synthetic": "desk"}, "bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"input": {"synthetic": "desk"}, "mode": "fancy"})
    with pytest.raises(ConfigError):
        config_from_dict({"input": {"synthetic": "desk"}, "ba": {"sigma": -1}})
    with pytest.raises(ConfigError):
        scene_spec_from_input({"preset": "moon"})
    with pytest.raises(ConfigError):
        scene_spec_from_input("no_such_file.yaml")


def test_artifacts_and_manifest(tmp_path):
    rep = run_pipeline(cfg(seeds=[0, 1]))
    man = export_artifacts(rep, tmp_path)
    names = [f["name"] for f in man["files"]]
    assert names == list(FIXED_ARTIFACTS) + ["trace_seed0.csv", "trace_seed1.csv"]
    for f in man["files"]:
        assert sha256_file(tmp_path / f["name"]) == f["sha256"]
    report = json.loads((tmp_path / "report.json").read_text())
    assert "timings_ms" not in report
    assert [r["seed"] for r in report["per_seed"]] == [0, 1]
    ply = read_ply(tmp_path / "map.ply")
    doc = json.loads((tmp_path / "map.json").read_text())
    assert len(ply["x"]) == len(doc["points"])
    traj = (tmp_path / "trajectory.txt").read_text().splitlines()
    assert len(traj) == 8 and all(len(line.split()) == 8 for line in traj)


def test_rerun_is_byte_identical(tmp_path):
    for sub in ("a", "b"):
        export_artifacts(run_pipeline(cfg()), tmp_path / sub)
    for name in FIXED_ARTIFACTS + ("trace_seed0.csv",):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_exported_dataset_round_trip(tmp_path):
    c = cfg(input={"synthetic": CLEAN}, init=NO_INIT_NOISE)
    ds = SyntheticDataset(scene_spec_from_input(CLEAN), 0, c.class_table.names(), c.init)
    export_dataset(ds, tmp_path / "ds", c.class_table.names())
    rec = config_from_dict({"mode": "planar_ba", "input": {"dataset": str(tmp_path / "ds")}})
    rep = run_pipeline(rec)
    assert rep.ate[0] <= 1e-6
    assert rep.normal_angles is not None


def test_comparison_table_and_sign():
    cmp = compare_modes(cfg())
    rows = cmp.rows()
    a, b = rows[0]["plain_ba_m"], rows[0]["planar_ba_m"]
    assert rows[0]["change_pct"] == pytest.approx(100 * (a - b) / a)
    assert "median" in cmp.table()
    assert json.loads(json.dumps(cmp.to_json_dict()))["seeds"] == [0]
    assert np.isfinite(cmp.percent_change)
