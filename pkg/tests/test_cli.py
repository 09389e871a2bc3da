import csv
import json

import numpy as np
import pytest

from kahlerlab.cli import emit_plots, main
from kahlerlab.torus import ScalarField, TorusSpec, write_field


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def small_field(tmp_path):
    T = TorusSpec(1, 4.0, 32)
    x, y = T.coords()
    path = tmp_path / "v.field"
    write_field(ScalarField(T, 0.05 * np.cos(2 * np.pi * x / T.L) + 0 * y), path)
    return path


def test_obstruction(capsys):
    code, out, _ = run(["obstruction", "--m", "1", "--p", "1", "--q", "3"], capsys)
    d = json.loads(out)
    assert code == 0 and d["verdict"] == "obstructed" and d["schema"] == 1


def test_obstruction_default_q(capsys):
    code, out, _ = run(["obstruction", "--m", "2"], capsys)
    d = json.loads(out)
    assert d["Q"] == [2.5, 3.5] and d["verdict"] == "obstructed"


def test_lemmas(capsys):
    code, out, _ = run(["lemmas", "--m", "2", "--trials", "60", "--seed", "7"], capsys)
    d = json.loads(out)
    assert code == 0
    assert d["dichotomy"]["violations"] == 0
    assert d["compatibilitySearch"]["searchStats"]["successes"] == 0
    assert d["controlSearch"]["searchStats"]["successes"] >= 1


def test_missing_field(capsys, tmp_path):
    code, _, err = run(["solve", "--v", str(tmp_path / "missing.field"), "--epsilon", "0.01"], capsys)
    assert code == 2 and "file not found" in err


def test_validation_names_parameter(capsys, small_field):
    code, _, err = run(["solve", "--v", str(small_field), "--epsilon", "-1"], capsys)
    assert code == 2 and "epsilon" in err
    code, _, err = run(["solve", "--v", str(small_field), "--epsilon", "0.1", "--nt", "4"], capsys)
    assert code == 2 and "nt" in err


def test_numerical_failure_exit_code(capsys, small_field):
    code, _, err = run(
        ["solve", "--v", str(small_field), "--epsilon", "0.1", "--max-iter", "1", "--newton-tol", "1e-15"], capsys
    )
    assert code == 3 and "NoConvergence" in err


def test_pipeline(capsys, tmp_path, small_field):
    sol = tmp_path / "sol.bin"
    rep = tmp_path / "sol.json"
    code, out, _ = run(["solve", "--v", str(small_field), "--epsilon", "0.05", "--nt", "8",
                        "--out", str(sol), "--report", str(rep)], capsys)
    assert code == 0 and json.loads(rep.read_text())["residualNorm"] <= 1e-10
    starts = tmp_path / "starts.json"
    starts.write_text("[[0, 0], [0.3, 0.2]]")
    traces = tmp_path / "traces.json"
    code, out, _ = run(["foliate", "--sol", str(sol), "--starts", str(starts), "--out", str(traces)], capsys)
    d = json.loads(traces.read_text())
    assert code == 0 and len(d["traces"]) == 2 and "structureResiduals" in d["extraction"]


def test_sweep_and_report(capsys, tmp_path, small_field):
    rep = tmp_path / "sweep.json"
    csv_path = tmp_path / "sweep.csv"
    code, _, _ = run(["sweep", "--v", str(small_field), "--schedule", "0.1,0.05,0.02,0.01", "--nt", "8",
                      "--csv", str(csv_path), "--report", str(rep)], capsys)
    assert code == 0
    rows = list(csv.reader(csv_path.open()))
    assert rows[0] == ["epsilon", "C0", "C1", "C2", "C3", "thirdDerivDiagnostic"] and len(rows) == 5
    code, out, _ = run(["report", "--inputs", str(rep), "--out-dir", str(tmp_path / "plots")], capsys)
    assert code == 0
    combined = list(csv.reader((tmp_path / "plots" / "combined.csv").open()))
    assert combined[0][0] == "run" and len(combined) == 5


def test_emit_plots_empty(tmp_path):
    rep = tmp_path / "empty.json"
    rep.write_text(json.dumps({"schema": 1, "rows": []}))
    files = emit_plots([str(rep)], str(tmp_path / "out"))
    assert (tmp_path / "out" / "empty.csv").read_text().strip() == "epsilon,C0,C1,C2,C3,thirdDerivDiagnostic"
    assert len(files) == 2


def test_emit_plots_schema_mismatch(capsys, tmp_path):
    rep = tmp_path / "bad.json"
    rep.write_text(json.dumps({"schema": 2, "rows": []}))
    code, _, err = run(["report", "--inputs", str(rep)], capsys)
    assert code == 2


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# obstruction run\nm = 1\nq = 2\n")
    code, out, _ = run(["--config", str(cfg), "obstruction"], capsys)
    assert code == 0 and json.loads(out)["verdict"] == "not-obstructed"
    code, out, _ = run(["--config", str(cfg), "obstruction", "--q", "3"], capsys)
    assert json.loads(out)["verdict"] == "obstructed"


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bogus = 1\n")
    code, _, err = run(["--config", str(cfg), "obstruction"], capsys)
    assert code == 2 and "bogus" in err


def test_deterministic_reports(capsys):
    argv = ["lemmas", "--m", "1", "--trials", "30", "--seed", "3"]
    assert run(argv, capsys)[1] == run(argv, capsys)[1]


def test_threads_env(capsys, monkeypatch):
    monkeypatch.setenv("LAB_THREADS", "zero")
    code, _, err = run(["lemmas", "--m", "1", "--trials", "5"], capsys)
    assert code == 2 and "LAB_THREADS" in err


def test_unknown_command(capsys):
    code, _, _ = run(["frobnicate"], capsys)
    assert code == 2
