import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from layerfmm.cli import EXIT_CONFIG, EXIT_OK, main, parse_n_list
from layerfmm.config import ConfigError, from_dict, parse_config, write_config
from layerfmm.sommerfeld import layered_green

from conftest import CONFIGS

REPORT_KEYS = {
    "command", "status", "phase", "error", "deterministic", "threads", "config",
    "mesh", "fmm", "solve", "errors", "results", "timings",
}


@pytest.fixture
def small_scene(tmp_path):
    raw = parse_config(CONFIGS / "example1.toml").to_dict()
    raw["discretization"]["n"] = 200
    raw["output"].update(nx=9, ny=7)
    path = tmp_path / "small.toml"
    write_config(from_dict(raw), path)
    return path


def read_report(d):
    return json.loads((d / "report.json").read_text())


def test_solve_writes_report_and_field(small_scene, tmp_path):
    out = tmp_path / "run"
    assert main(["solve", str(small_scene), "--out", str(out)]) == EXIT_OK
    rep = read_report(out)
    assert set(rep) == REPORT_KEYS
    assert rep["status"] == "ok" and rep["solve"]["converged"]
    assert rep["errors"]["linf"] < 0.1
    with open(out / "field.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "re_us", "im_us", "mask"]
    assert len(rows) == 1 + 9 * 7
    assert {r[4] for r in rows[1:]} <= {"0", "1"}


def test_deterministic_runs_match_apart_from_timings(small_scene, tmp_path):
    reps = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["solve", str(small_scene), "--out", str(out), "--deterministic"]) == EXIT_OK
        rep = read_report(out)
        rep.pop("timings")
        rep["solve"]["timings"] = None
        reps.append(rep)
        reps[-1]["field"] = (out / "field.csv").read_text()
    assert reps[0] == reps[1]
    assert reps[0]["deterministic"] and reps[0]["threads"] is None


def test_config_error_keeps_report_keys(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[stack]\ninterfaces = [0.0]\nk = [1.0]\neta = [1.0, 1.0]\n')
    out = tmp_path / "run"
    assert main(["solve", str(bad), "--out", str(out)]) == EXIT_CONFIG
    rep = read_report(out)
    assert set(rep) == REPORT_KEYS
    assert rep["status"] == "error" and rep["phase"] == "config"
    assert "stack.k" in rep["error"]


def test_missing_config_file(tmp_path):
    out = tmp_path / "run"
    assert main(["solve", str(tmp_path / "none.toml"), "--out", str(out)]) == EXIT_CONFIG
    assert "cannot read" in read_report(out)["error"]


def test_greens_subcommand(tmp_path, capsys):
    out = tmp_path / "g"
    code = main(["greens", str(CONFIGS / "example1.toml"), "--src", "0,-0.5", "--dst", "1.0,-2.5", "--out", str(out)])
    assert code == EXIT_OK
    res = read_report(out)["results"]
    st = parse_config(CONFIGS / "example1.toml").layer_stack()
    g = layered_green(st, 3, 1, np.array([1.0, -2.5]), np.array([0.0, -0.5]))
    assert res["src_layer"] == 1 and res["dst_layer"] == 3
    assert complex(res["re_g"], res["im_g"]) == pytest.approx(g, rel=1e-12)
    assert "re_g" in capsys.readouterr().out


def test_greens_rejects_bad_point(tmp_path):
    out = tmp_path / "g"
    assert main(["greens", str(CONFIGS / "example1.toml"), "--src", "0", "--dst", "1,1", "--out", str(out)]) == EXIT_CONFIG


def test_scale_single_n_has_undefined_slope(small_scene, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["scale", str(small_scene), "--n", "200", "--repeats", "2", "--out", str(out)]) == EXIT_OK
    res = read_report(out)["results"]
    assert res["slope"] is None and res["slope_defined"] is False
    assert len(res["rows"]) == 1
    assert "undefined" in capsys.readouterr().out
    assert (out / "scaling.csv").exists()


def test_converge_small(small_scene, tmp_path):
    out = tmp_path / "c"
    assert main(["converge", str(small_scene), "--n", "64,128", "--out", str(out)]) == EXIT_OK
    rows = read_report(out)["results"]["rows"]
    assert rows[0]["ratio_linf"] is None and rows[1]["ratio_linf"] > 1
    assert (out / "convergence.csv").exists()


def test_converge_empty_list_is_config_error(small_scene, tmp_path):
    out = tmp_path / "c"
    assert main(["converge", str(small_scene), "--n", "", "--out", str(out)]) == EXIT_CONFIG
    assert "empty" in read_report(out)["error"]


def test_parse_n_list():
    assert parse_n_list("256, 512,1024") == [256, 512, 1024]
    with pytest.raises(ConfigError):
        parse_n_list("8")
    with pytest.raises(ConfigError):
        parse_n_list("a,b")


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "layerfmm.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("solve", "converge", "scale", "greens"):
        assert cmd in r.stdout
