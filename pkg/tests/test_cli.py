import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from hjbsos import __version__
from hjbsos.cli import main

from conftest import CONFIG

GOLDEN = json.loads((Path(__file__).parent / "golden" / "csv_schemas.json").read_text())


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "results"
    assert run("solve", "--config", CONFIG, "--out", out, "--degrees", "14:16") == 0
    return out


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def edited_config(tmp_path, **changes):
    raw = json.loads(CONFIG.read_text())
    for key, value in changes.items():
        raw[key] = value
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


# solve ------------------------------------------------------------------------------------------


def test_solve_report(solved):
    report = json.loads((solved / "solve" / "report.json").read_text())
    assert report["tool"] == "hjbsos" and report["version"] == __version__
    assert len(report["config_sha256"]) == 64
    assert [d["degree"] for d in report["degrees"]] == [14, 16]
    assert all(d["status"] == "Optimal" for d in report["degrees"])
    assert set(report["epsilon_sequence"]) == {"0", "1"}
    assert "seconds" not in json.dumps(report)


def test_solve_is_deterministic(solved, tmp_path):
    again = tmp_path / "again"
    assert run("solve", "--config", CONFIG, "--out", again, "--degrees", "14:16") == 0
    assert tree_bytes(again / "solve") == tree_bytes(solved / "solve")


def test_existing_output_refused_without_force(solved, capsys):
    before = tree_bytes(solved / "solve")
    assert run("solve", "--config", CONFIG, "--out", solved, "--degrees", "14:14") == 2
    assert "--force" in capsys.readouterr().err
    assert tree_bytes(solved / "solve") == before


def test_force_replaces_output(tmp_path):
    out = tmp_path / "r"
    assert run("solve", "--config", CONFIG, "--out", out, "--degrees", "14:14") == 0
    assert run("solve", "--config", CONFIG, "--out", out, "--degrees", "16:16", "--force") == 0
    report = json.loads((out / "solve" / "report.json").read_text())
    assert [d["degree"] for d in report["degrees"]] == [16]


def test_malformed_polynomial_names_field(tmp_path, capsys):
    cfg = edited_config(tmp_path, drift=["-x^3 + 5*x^^2 + 3*x"])
    assert run("solve", "--config", cfg, "--out", tmp_path / "r") == 2
    assert "drift[0]" in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "variables": ["x"],\n  "drift": [\n}')
    assert run("solve", "--config", cfg, "--out", tmp_path / "r") == 2
    assert "line 4" in capsys.readouterr().err


def test_bad_degree_range(tmp_path):
    assert run("solve", "--config", CONFIG, "--out", tmp_path, "--degrees", "9:12") == 2


def test_all_infeasible_is_solver_failure(tmp_path):
    assert run("solve", "--config", CONFIG, "--out", tmp_path, "--degrees", "2:4") == 3


# simulate ------------------------------------------------------------------------------------------


def test_simulate_single_run_is_usage_error(solved, capsys):
    assert run("simulate", "--config", CONFIG, "--out", solved, "--degree", "16", "--runs", "1") == 2
    assert "--runs" in capsys.readouterr().err


def test_simulate_missing_artifacts(tmp_path):
    assert run("simulate", "--config", CONFIG, "--out", tmp_path, "--degree", "16") == 2


def test_simulate_deterministic_and_bounded(solved, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(solved / "solve", copy / "solve")
    for root in (solved, copy):
        assert run("simulate", "--config", CONFIG, "--out", root, "--degree", "16", "--seed", "5", "--runs", "20") == 0
    a, b = tree_bytes(solved / "simulate_d16"), tree_bytes(copy / "simulate_d16")
    assert a == b and len(a) == 21
    summary = json.loads(a["summary.json"])
    mc = summary["monte_carlo"]
    assert summary["cost_bound_ok"] and mc["mean_cost"] <= summary["v_u_x0"] + 2 * mc["std_err"]


# verify ----------------------------------------------------------------------------------------------


def test_verify_passes(solved):
    assert run("verify", "--config", CONFIG, "--out", solved, "--degree", "16") == 0
    report = json.loads((solved / "verify_d16" / "report.json").read_text())
    d = report["degrees"][0]
    assert d["sclf"]["violations"] == 0 and d["oracle"]["status"] == "checked"
    assert all(piece["ok"] for piece in d["oracle"]["pieces"])


def test_verify_detects_corruption(solved, tmp_path):
    out = tmp_path / "corrupt"
    shutil.copytree(solved / "solve", out / "solve")
    path = out / "solve" / "report.json"
    report = json.loads(path.read_text())
    for d in report["degrees"]:
        for piece in d["pieces"]:
            piece["psi_l"] = [[[0], 1.0], [[2], -0.5]]
    path.write_text(json.dumps(report))
    assert run("verify", "--config", CONFIG, "--out", out, "--degree", "16") == 1
    bad = json.loads((out / "verify_d16" / "report.json").read_text())["degrees"][0]
    assert bad["sclf"]["violations"] > 0


def test_verify_rejects_foreign_report(solved, tmp_path):
    cfg = edited_config(tmp_path, name="renamed")
    assert run("verify", "--config", cfg, "--out", solved, "--degree", "16") == 2


# oracle and schemas ----------------------------------------------------------------------------------


def test_csv_schemas_match_golden(solved, tmp_path):
    assert run("oracle", "--config", CONFIG, "--out", tmp_path) == 0
    run("simulate", "--config", CONFIG, "--out", solved, "--degree", "14", "--runs", "2")
    headers = {
        "solve/degree_XX.csv": (solved / "solve" / "degree_14.csv"),
        "simulate_dXX/run_XXX.csv": (solved / "simulate_d14" / "run_000.csv"),
        "oracle/oracle_pieceK.csv": (tmp_path / "oracle" / "oracle_piece0.csv"),
    }
    for key, path in headers.items():
        first, second = path.read_text().splitlines()[:2]
        assert first == GOLDEN[key]
        # every data field is a round-trippable float
        assert len(second.split(",")) == len(first.split(","))
        assert all(np.isfinite(float(v)) or v in ("inf",) for v in second.split(","))
    report = json.loads((tmp_path / "oracle" / "report.json").read_text())
    assert [p["interval"] for p in report["pieces"]] == [[-1.0, 0.0], [0.0, 1.0]]
