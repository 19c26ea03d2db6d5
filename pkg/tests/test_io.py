import copy
import json

import numpy as np
import pytest

from hsflow.analysis import analyze_family
from hsflow.geometry import CHARTS, Atlas, ChartField
from hsflow.io import (REPORT_SCHEMA, GridFile, GridFormatError, load_flow, read_grid, read_report, save_flow,
                       validate_report, write_grid, write_report)


def _grid_file():
    a = Atlas(17)
    rng = np.random.default_rng(5)
    f = ChartField(a, rng.standard_normal((17, 17)), rng.standard_normal((17, 17)), fs_weight=0.5, name="f",
                   time=0.25)
    f.z[0, 0], f.z[1, 1], f.w[2, 2] = np.nan, -np.inf, np.inf
    f.z[3, 3] = -0.0
    gf = GridFile(a, t_grid=np.linspace(0, 1, 4), s_grid=np.array([0.0, 0.5]), meta={"note": "x"})
    gf.add(f)
    gf.add(f.scaled(1 / 3), "g")
    return gf


def test_roundtrip_is_bit_exact(tmp_path):
    gf = _grid_file()
    p = tmp_path / "a.hsg"
    write_grid(gf, p)
    back = read_grid(p)
    assert back.names == gf.names
    for name in gf.names:
        for c in CHARTS:
            assert gf.field(name)[c].tobytes() == back.field(name)[c].tobytes()
        assert back.field(name).fs_weight == gf.field(name).fs_weight
    assert back.field("f").time == 0.25
    np.testing.assert_array_equal(back.t_grid, gf.t_grid)
    assert back.meta == {"note": "x"}
    # writing again gives the same bytes
    write_grid(back, tmp_path / "b.hsg")
    assert (tmp_path / "a.hsg").read_bytes() == (tmp_path / "b.hsg").read_bytes()


def test_layout(tmp_path):
    gf = _grid_file()
    p = tmp_path / "a.hsg"
    write_grid(gf, p)
    raw = p.read_bytes()
    magic, head, payload = raw.split(b"\n", 2)
    assert magic == b"HSG1"
    h = json.loads(head)
    assert h["n"] == 17 and [f["name"] for f in h["fields"]] == ["f", "g"]
    assert len(payload) == 2 * 2 * 17 * 17 * 8
    first = np.frombuffer(payload[:17 * 17 * 8], dtype="<f8").reshape(17, 17)
    assert first.tobytes() == gf.field("f").z.tobytes()


@pytest.mark.parametrize("damage", ["magic", "truncate", "header", "version"])
def test_corrupt_files_rejected(tmp_path, damage):
    p = tmp_path / "a.hsg"
    write_grid(_grid_file(), p)
    raw = p.read_bytes()
    if damage == "magic":
        raw = b"XXXX" + raw[4:]
    elif damage == "truncate":
        raw = raw[:-8]
    elif damage == "header":
        magic, head, payload = raw.split(b"\n", 2)
        raw = magic + b"\n{broken\n" + payload
    else:
        raw = raw.replace(b'"version": 1', b'"version": 9')
    p.write_bytes(raw)
    with pytest.raises(GridFormatError):
        read_grid(p)


def test_missing_file(tmp_path):
    with pytest.raises(GridFormatError):
        read_grid(tmp_path / "nope.hsg")


def test_flow_roundtrip(tmp_path, zero65):
    p = tmp_path / "flow.hsg"
    save_flow(zero65, p, '{"variant": "zero"}')
    back = load_flow(p)
    np.testing.assert_array_equal(back.t_grid, zero65.t_grid)
    for a, b in zip(zero65.snapshots, back.snapshots):
        assert a.area == b.area
        for c in CHARTS:
            assert a.psi[c].tobytes() == b.psi[c].tobytes()
            np.testing.assert_array_equal(a.mask[c], b.mask[c])
            ok = np.isfinite(a.u[c])
            np.testing.assert_allclose(a.u[c][ok], b.u[c][ok], atol=1e-12)
    assert read_grid(p).meta["potential"] == {"variant": "zero"}


def test_non_flow_grid_rejected(tmp_path):
    p = tmp_path / "a.hsg"
    write_grid(_grid_file(), p)
    with pytest.raises(GridFormatError, match="flow"):
        load_flow(p)


@pytest.fixture(scope="module")
def report(zero65):
    return analyze_family(zero65, exit_samples=50).report


def test_report_schema(tmp_path, report):
    doc = write_report(report, tmp_path / "r.json")
    validate_report(doc)
    back = read_report(tmp_path / "r.json")
    assert back == json.loads(json.dumps(doc))
    nt = len(back["t"])
    for key in ("area", "domain_components", "complement_components"):
        assert len(back[key]) == nt
    assert set(REPORT_SCHEMA["required"]) <= set(back)


def test_report_length_mismatch_rejected(tmp_path, report):
    bad = copy.deepcopy(write_report(report, tmp_path / "r.json"))
    bad["area"] = bad["area"][:-1]
    with pytest.raises(GridFormatError, match="area"):
        validate_report(bad)


def test_report_schema_violation_rejected(tmp_path, report):
    bad = copy.deepcopy(write_report(report, tmp_path / "r.json"))
    bad["window"] = [0.1]
    with pytest.raises(GridFormatError, match="window"):
        validate_report(bad)
    del bad["H_checks"]
    with pytest.raises(GridFormatError):
        validate_report(bad)
    (tmp_path / "x.json").write_text("not json")
    with pytest.raises(GridFormatError):
        read_report(tmp_path / "x.json")
