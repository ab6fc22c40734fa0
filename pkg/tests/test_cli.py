import json
import subprocess
import sys

import pytest
import yaml

from clusterslam.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


def write_cfg(path, **kw):
    d = {"mode": "planar_ba", "input": {"synthetic": {"preset": "desk", "frames": 6}}, "seeds": [0]}
    d.update(kw)
    path.write_text(yaml.safe_dump(d))
    return str(path)


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--mode", "plain"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "median ATE (plain_ba)" in out
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert len(man["files"]) == 6


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", seeds=[0, 1, 2])
    assert main(["run", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "o")]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["seeds"] == [2]


def test_config_errors_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    bad = write_cfg(tmp_path / "bad.yaml", planar_classes=["sofa"])
    assert main(["run", "--config", bad]) == EXIT_CONFIG
    (tmp_path / "junk.yaml").write_text("mode: [unclosed\n")
    assert main(["run", "--config", str(tmp_path / "junk.yaml")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2


def test_runtime_failure_exit_3(tmp_path):
    ds = tmp_path / "ds"
    ds.mkdir()
    (ds / "dataset.yaml").write_text(yaml.safe_dump({"intrinsics": {"fx": 1.0, "fy": 1.0, "cx": 1.0, "cy": 1.0, "width": 4, "height": 4}}))
    cfg = write_cfg(tmp_path / "c.yaml", input={"dataset": str(ds)})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_simulate_then_run_and_eval(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "ds")]) == EXIT_OK
    assert (tmp_path / "ds" / "tracks.csv").exists()
    rcfg = write_cfg(tmp_path / "r.yaml", input={"dataset": "ds"})
    assert main(["run", "--config", rcfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    capsys.readouterr()
    rc = main(["eval", str(tmp_path / "o" / "trajectory.txt"), str(tmp_path / "ds" / "groundtruth.txt")])
    assert rc == EXIT_OK
    assert "ATE RMSE (sim3)" in capsys.readouterr().out


def test_compare_writes_json(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml")
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "planar_ba(mm)" in capsys.readouterr().out
    data = json.loads((tmp_path / "o" / "compare.json").read_text())
    assert "sign_convention" in data


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "clusterslam", "eval", "nope.txt", "nope.txt"], capture_output=True, text=True)
    assert r.returncode == EXIT_RUNTIME
    assert "runtime failure" in r.stderr
