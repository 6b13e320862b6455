import json
import subprocess
import sys

import jsonschema
import pytest

from sqlearn.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from sqlearn.report import REPORT_SCHEMA


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"data": {"generator": "classification", "n": 200, "d": 3},
                                "bias": True, "seeds": [0, 1]}))
    return path


def test_train_to_file(small_cfg, tmp_path):
    out = tmp_path / "r.json"
    hist = tmp_path / "h.csv"
    code = main(["train", "--config", str(small_cfg), "--output", str(out),
                 "--histogram-csv", str(hist)])
    assert code == EXIT_OK
    rep = json.loads(out.read_text())
    jsonschema.validate(rep, REPORT_SCHEMA)
    assert len(rep["runs"]) == 2
    assert hist.read_text().count("\n") == 1 + 2 * 30


def test_flag_overrides(small_cfg, tmp_path):
    out = tmp_path / "r.json"
    main(["train", "--config", str(small_cfg), "--p", "0.8", "--mu", "0.5", "--seed", "7",
          "--algorithm", "gradient", "--lr", "0.05", "--max-iter", "20", "--lambda", "0.1",
          "--output", str(out)])
    rep = json.loads(out.read_text())
    c = rep["config"]
    assert c["objective"]["p"] == 0.8 and c["objective"]["mu"] == 0.5 and c["lam"] == 0.1
    assert c["optimizer"]["algorithm"] == "gradient" and c["optimizer"]["step_size"] == 0.05
    assert [r["seed"] for r in rep["runs"]] == [7]
    assert rep["runs"][0]["model"]["iterations"] <= 20


def test_stdout(small_cfg, capsys):
    assert main(["cv", "--config", str(small_cfg), "--seed", "0"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["command"] == "cv" and "best_p" in rep["runs"][0]


def test_sweeps(small_cfg, tmp_path):
    out = tmp_path / "s.json"
    assert main(["shift-sweep", "--config", str(small_cfg), "--alphas", "0.3,0.6",
                 "--output", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["sweep"]["alphas"] == [0.3, 0.6]
    assert main(["mu-sweep", "--config", str(small_cfg), "--mus", "1,10", "--seed", "0",
                 "--output", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["sweep"]["mus"] == [1.0, 10.0]


@pytest.mark.parametrize("argv", [
    ["train", "--p", "1.0"],
    ["train", "--mu", "-1"],
    ["train", "--algorithm", "adam"],
    ["train", "--config", "/nonexistent/c.json"],
    ["cv", "--objective", "erm"],
    ["generate", "regression", "--n", "1", "--output", "/tmp/x.csv"],
])
def test_config_errors(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_data_error(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("x,y\n1.0,2.0\nbad,3.0\n")
    (tmp_path / "s.json").write_text(json.dumps(
        {"features": ["x"], "target": "y", "task": "regression"}))
    (tmp_path / "c.json").write_text(json.dumps(
        {"data": {"source": "csv", "path": "d.csv", "schema": "s.json"}}))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_generate_roundtrip(tmp_path):
    csv_path = tmp_path / "g.csv"
    assert main(["generate", "classification", "--n", "120", "--d", "4", "--seed", "3",
                 "--output", str(csv_path)]) == EXIT_OK
    schema = json.loads((tmp_path / "g.csv.schema.json").read_text())
    assert schema["task"] == "binary_classification"
    (tmp_path / "c.json").write_text(json.dumps(
        {"data": {"source": "csv", "path": "g.csv", "schema": "g.csv.schema.json"},
         "optimizer": {"max_iter": 30}}))
    out = tmp_path / "r.json"
    assert main(["train", "--config", str(tmp_path / "c.json"), "--output", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["runs"][0]["n_test"] == 24


def test_module_entry_point(tmp_path):
    out = tmp_path / "r.json"
    proc = subprocess.run(
        [sys.executable, "-m", "sqlearn", "train", "--max-iter", "5", "--output", str(out)],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["command"] == "train"
