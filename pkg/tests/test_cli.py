import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hsflow.cli import main
from hsflow.io import read_grid, read_report


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "zero.json").write_text('{"variant": "zero"}')
    (d / "dumbbell.json").write_text('{"variant": "dumbbell"}')
    return d


@pytest.fixture(scope="module")
def zero_flow(workdir):
    out = workdir / "zero.hsg"
    assert main(["flow", str(workdir / "zero.json"), "--n", "128", "--nt", "20", "--out", str(out)]) == 0
    return out


def test_flow_zero_areas(zero_flow):
    gf = read_grid(zero_flow)
    assert gf.atlas.n == 129
    area = np.array(gf.meta["area"])
    assert gf.t_grid.size == 20
    assert np.max(np.abs(area - gf.t_grid)) <= 0.02


def test_flow_single_time(workdir, capsys):
    out = workdir / "one.hsg"
    assert main(["flow", str(workdir / "zero.json"), "--n", "33", "--nt", "1", "--out", str(out)]) == 0
    gf = read_grid(out)
    assert gf.t_grid.tolist() == [0.0]
    assert gf.meta["area"] == [0.0]


def test_malformed_spec_exit_2(workdir, capsys):
    bad = workdir / "bad.json"
    bad.write_text("{variant: zero")
    assert main(["flow", str(bad), "--n", "33", "--nt", "3", "--out", str(workdir / "x.hsg")]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_missing_spec_exit_2(workdir):
    assert main(["flow", str(workdir / "missing.json"), "--out", str(workdir / "x.hsg")]) == 2


def test_usage_errors_exit_2(workdir):
    with pytest.raises(SystemExit) as exc:
        main(["flow"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "nonsense"])
    assert exc.value.code == 2
    assert main(["flow", str(workdir / "zero.json"), "--nt", "0", "--out", str(workdir / "x.hsg")]) == 2


def test_jobs_validation(workdir, monkeypatch):
    spec = str(workdir / "zero.json")
    out = str(workdir / "j.hsg")
    assert main(["flow", spec, "--n", "17", "--nt", "3", "--jobs", "0", "--out", out]) == 2
    monkeypatch.setenv("HSFLOW_JOBS", "many")
    assert main(["flow", spec, "--n", "17", "--nt", "3", "--out", out]) == 2
    monkeypatch.setenv("HSFLOW_JOBS", "2")
    assert main(["flow", spec, "--n", "17", "--nt", "3", "--independent", "--out", out]) == 0


def test_analyze_and_report(workdir, zero_flow):
    rep = workdir / "zero_report.json"
    assert main(["analyze", str(zero_flow), "--out", str(rep)]) == 0
    doc = read_report(rep)
    assert doc["window"] is None
    assert len(doc["area"]) == len(doc["t"]) == 20
    kinds = {d["kind"] for d in doc["discs"]}
    assert "center" in kinds and "riemann" in kinds
    h = doc["meta"]["h"]
    for d in doc["discs"]:
        if d["kind"] == "riemann":
            assert d["residual"]["max"] <= 1e-3 + 20 * h * h
    assert doc["H_checks"]["exit_time_ok"]


def test_analyze_corrupt_file_exit_2(workdir):
    bad = workdir / "corrupt.hsg"
    bad.write_bytes(b"HSG1\n{}\n")
    assert main(["analyze", str(bad), "--out", str(workdir / "r.json")]) == 2
    assert main(["analyze", str(workdir / "nothing.hsg"), "--out", str(workdir / "r.json")]) == 2


def test_analyze_bad_options_exit_2(workdir, zero_flow):
    out = str(workdir / "r.json")
    assert main(["analyze", str(zero_flow), "--smax", "x", "--out", out]) == 2
    assert main(["analyze", str(zero_flow), "--t1", "0.5", "--out", out]) == 2
    assert main(["analyze", str(zero_flow), "--t1", "0.5", "--t2", "0.2", "--out", out]) == 2


def test_analysis_failure_exit_1_with_stage(workdir, zero_flow):
    env = dict(os.environ, HSFLOW_MEMORY_GB="0.0001")
    proc = subprocess.run([sys.executable, "-m", "hsflow.cli", "analyze", str(zero_flow), "--out",
                           str(workdir / "r.json")], capture_output=True, text=True, env=env)
    assert proc.returncode == 1
    assert "legendre" in proc.stderr


def test_render_all(workdir, zero_flow, capsys):
    prefix = workdir / "img" / "zero"
    assert main(["render", str(zero_flow), "--style", "all", "--size", "64", "--out", str(prefix)]) == 0
    for suffix in ("_fronts.ppm", "_H.ppm", "_discs.ppm"):
        assert (workdir / "img" / f"zero{suffix}").read_bytes()[:2] == b"P6"
    assert (workdir / "img" / "zero_profile.csv").exists()
    assert (workdir / "img" / "zero_radius.csv").exists()


def test_render_is_deterministic(workdir, zero_flow):
    a, b = workdir / "ra", workdir / "rb"
    for p in (a, b):
        assert main(["render", str(zero_flow), "--style", "fronts", "--size", "64", "--out", str(p)]) == 0
    assert (workdir / "ra_fronts.ppm").read_bytes() == (workdir / "rb_fronts.ppm").read_bytes()


def test_profile_needs_radial_potential(workdir):
    out = workdir / "db.hsg"
    assert main(["flow", str(workdir / "dumbbell.json"), "--n", "65", "--nt", "3", "--out", str(out)]) == 0
    assert main(["render", str(out), "--style", "profile", "--out", str(workdir / "p")]) == 2
    assert main(["render", str(out), "--style", "profile", "--force-profile", "--out", str(workdir / "p")]) == 0


def test_verify_reports_checks(capsys):
    code = main(["verify", "--suite", "duality", "--n", "33", "--nt", "21"])
    out = capsys.readouterr().out
    lines = [ln for ln in out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert lines
    assert code == (1 if any(ln.startswith("FAIL") for ln in lines) else 0)


def test_verify_area_grid_option(capsys):
    assert main(["verify", "--suite", "radial", "--area-n", "65"]) == 2
    code = main(["verify", "--suite", "dumbbell", "--n", "65", "--nt", "11", "--area-n", "65"])
    out = capsys.readouterr().out
    assert "max |area - t| at n=65" in out
    assert code in (0, 1)


def test_console_script_version():
    proc = subprocess.run([sys.executable, "-m", "hsflow.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "hsflow" in proc.stdout
