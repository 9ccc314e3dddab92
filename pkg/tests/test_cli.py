import json

import pytest
import yaml

from quadmpc.cli import main
from quadmpc.report import TRAJECTORY_COLUMNS, read_csv


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_run_hover_writes_trajectory_and_manifest(tmp_path):
    out = tmp_path / "hover"
    assert main(["run", "--scenario", "hover", "--out", str(out)]) == 0
    header, *rows = read_csv(out / "trajectory.csv")
    assert header == list(TRAJECTORY_COLUMNS)
    assert len(rows) == 51
    assert rows[-1][header.index("status")] == "final"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "run"
    assert "trajectory.csv" in manifest["files"]
    assert (out / "states.svg").exists()


def test_rerun_is_identical_apart_from_timing(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "--scenario", "hover", "--out", str(d), "--no-plots"]) == 0
    ra, rb = read_csv(a / "trajectory.csv"), read_csv(b / "trajectory.csv")
    col = ra[0].index("solve_ms")
    strip = lambda rows: [r[:col] + r[col + 1:] for r in rows]
    assert strip(ra) == strip(rb)
    assert not (a / "states.svg").exists()


def test_missing_x0_is_a_schema_error(tmp_path, capsys):
    path = write_yaml(tmp_path / "s.yaml", {"schema_version": 1, "name": "broken"})
    assert main(["run", "--scenario", path, "--out", str(tmp_path / "o")]) == 3
    assert "$.x0" in capsys.readouterr().err


def test_unknown_key_is_reported_by_path(tmp_path, capsys):
    path = write_yaml(tmp_path / "s.yaml", {"schema_version": 1, "x0": [0.0] * 12, "Qdiag": [1]})
    assert main(["run", "--scenario", path, "--out", str(tmp_path / "o")]) == 3
    assert "$.Qdiag" in capsys.readouterr().err


def test_wrong_type_is_reported_by_path(tmp_path, capsys):
    path = write_yaml(tmp_path / "s.yaml", {"schema_version": 1, "x0": [0.0] * 11 + ["a"]})
    assert main(["run", "--scenario", path, "--out", str(tmp_path / "o")]) == 3
    assert "$.x0[11]" in capsys.readouterr().err


def test_unreachable_reference_exits_with_target_error(tmp_path, capsys):
    path = write_yaml(tmp_path / "s.yaml", {
        "schema_version": 1, "x0": [0.0] * 12, "feedback": "output",
        "y_ref": [0, 0, 500, 0, 0, 0], "steps": 5})
    assert main(["run", "--scenario", path, "--out", str(tmp_path / "o")]) == 2
    assert "infeasible target" in capsys.readouterr().err


def test_certify_passes(tmp_path):
    assert main(["certify", "--samples", "100", "--out", str(tmp_path), "--no-plots"]) == 0
    header, *rows = read_csv(tmp_path / "certificate.csv")
    assert header == ["check", "value", "passed"]
    assert all(r[2] == "true" for r in rows)


def test_scenarios_lists_bundled_files(capsys):
    assert main(["scenarios"]) == 0
    names = capsys.readouterr().out.split()
    assert {"hover", "regulation", "disturbance"} <= set(names)


def test_environment_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("QUADMPC_OUT", str(tmp_path))
    assert main(["run", "--scenario", "hover", "--no-plots"]) == 0
    assert list(tmp_path.rglob("trajectory.csv"))


@pytest.mark.slow
def test_sweep_n_writes_timing_table(tmp_path):
    assert main(["sweep-n", "--scenario", "regulation", "--Ns", "5,10", "--out", str(tmp_path),
                 "--no-plots"]) == 0
    header, *rows = read_csv(tmp_path / "timing.csv")
    assert [r[0] for r in rows] == ["5", "10"]
    assert (tmp_path / "trajectory_N10.csv").exists()
