import csv
import json

import numpy as np
import pytest

from sps2.cli import (CSV_HEADER, RunConfig, dump_system, main, parse_system, run_pipeline,
                      save_system)
from sps2.errors import ParseError, StructuralError

DIAG = {
    "arc": [0.0, 0.0],
    "disc_radius": 0.5,
    "sector_radius": 1.0,
    "trunc": {"eps": 2, "x": 3},
    "matrix": {"a11": [[0, 0, -0.5, 0.0]], "a12": [], "a21": [], "a22": [[0, 0, 0.5, 0.0]]},
}


def write(tmp_path, doc, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if isinstance(doc, dict) else doc)
    return p


def test_parse_minimal_diagonal():
    spec = parse_system(json.dumps(DIAG))
    assert spec.K == 2 and spec.N == 3
    np.testing.assert_allclose(spec(0.1, 0.05), np.diag([-0.5, 0.5]))


@pytest.mark.parametrize("edit, pointer", [
    (lambda d: d["matrix"]["a12"].append([3, 0, 1.0, 0.0]), "/matrix/a12/0"),
    (lambda d: d["matrix"]["a11"].append([0, 0, 1.0, 0.0]), "/matrix/a11/1"),
    (lambda d: d["matrix"].pop("a21"), "/matrix"),
    (lambda d: d.update(arc=[0.5, 0.1]), "/arc"),
    (lambda d: d.update(disc_radius=-1), "/disc_radius"),
])
def test_parse_errors_carry_pointer(edit, pointer):
    doc = json.loads(json.dumps(DIAG))
    edit(doc)
    with pytest.raises(ParseError) as info:
        parse_system(json.dumps(doc))
    assert info.value.pointer == pointer


def test_round_trip_byte_identical(tmp_path):
    doc = json.loads(json.dumps(DIAG))
    doc["matrix"]["a12"] = [[1, 2, 0.25, -1.5]]
    text = dump_system(parse_system(json.dumps(doc)))
    p = tmp_path / "a.json"
    save_system(parse_system(text), p)
    assert p.read_text() == text
    assert dump_system(parse_system(p.read_text())) == text


def test_run_config_validation():
    with pytest.raises(StructuralError):
        RunConfig("bogus", "x.json")
    with pytest.raises(StructuralError):
        RunConfig("levelt")
    with pytest.raises(StructuralError):
        RunConfig("levelt", "x.json", eps_order=2)
    with pytest.raises(StructuralError):
        RunConfig("levelt", "x.json", step=0.3)
    assert RunConfig("normal-form", "x.json").eps_order == 12
    assert RunConfig("levelt", "x.json").eps_order == 40
    assert RunConfig("levelt", "x.json", x_order=15).lines == 16


def test_normal_form_command(tmp_path):
    p = write(tmp_path, DIAG)
    code, rep = run_pipeline(RunConfig("normal-form", str(p), out=str(tmp_path)), "t")
    assert code == 0
    assert rep["normal_form"]["relative_residual"] <= 1e-9
    assert json.loads((tmp_path / "report.json").read_text())["status"] == "ok"


def test_levelt_diagonal_zero_couplings(tmp_path):
    p = write(tmp_path, DIAG)
    out = tmp_path / "out"
    csv_path = tmp_path / "basis.csv"
    code = main(["levelt", str(p), "--eps", "0.1,0.05", "--out", str(out),
                 "--csv", str(csv_path)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert all(c["max_abs"] < 1e-10 for c in rep["levelt"]["couplings"])
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert len(rows) > 1 and all(len(r) == len(CSV_HEADER) for r in rows)


def test_levelt_deterministic_modulo_timestamp(tmp_path):
    p = write(tmp_path, DIAG)
    reps = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        run_pipeline(RunConfig("levelt", str(p), eps=[0.1], out=str(out)), f"stamp{k}")
        rep = json.loads((out / "report.json").read_text())
        rep.pop("timestamp")
        rep["config"].pop("out")
        reps.append(rep)
    assert reps[0] == reps[1]


def test_verify_command(tmp_path):
    code, rep = run_pipeline(RunConfig("verify", out=str(tmp_path)), "t")
    assert code == 0
    assert all(s["passed"] for s in rep["verify"].values())


def test_corrupt_input_exit_code(tmp_path, capsys):
    p = write(tmp_path, "{not json")
    assert main(["normal-form", str(p), "--out", str(tmp_path)]) == 2
    assert "ParseError" in capsys.readouterr().err
    assert main(["normal-form", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["normal-form", str(p), "--eps-order", "2"]) == 2


def test_thread_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("SPS2_THREADS", "1")
    p = write(tmp_path, DIAG)
    assert main(["normal-form", str(p), "--out", str(tmp_path)]) == 0
    monkeypatch.setenv("SPS2_THREADS", "many")
    assert main(["normal-form", str(p), "--out", str(tmp_path)]) == 2
