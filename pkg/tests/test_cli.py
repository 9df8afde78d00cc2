from __future__ import annotations

import json
import math
import subprocess
import sys

import pytest

from velomotion import cli
from velomotion.io import read_csv

MODEL = {"velocities": [[0], [1]], "kernel": {"kind": "complete", "p": [0.5, 0.5]},
         "rate": {"kind": "constant", "value": 1.0}}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def run(*args):
    return cli.main([*map(str, args)])


def base_doc(**query):
    return {"model": MODEL, "query": {"t": 1.0, **query}, "run": {"replicas": 10, "seed": 1}}


def test_simulate_raw_rows(tmp_path):
    cfg = write_config(tmp_path, base_doc())
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o", "--raw") == 0
    comments, cols, rows = read_csv(tmp_path / "o" / "raw.csv")
    assert len(rows) == 10
    assert cols == ["x1", "T0", "T1", "N0", "N1", "terminal"]
    for r in rows:
        assert float(r[1]) + float(r[2]) == pytest.approx(1.0)


def test_simulate_twice_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, base_doc(bins=5))
    for d in ("a", "b"):
        assert run("simulate", "--config", cfg, "--out", tmp_path / d, "--replicas", 500) == 0
    for name in ("summary.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path, base_doc(bins=5))
    run("simulate", "--config", cfg, "--out", tmp_path / "a", "--replicas", 500)
    run("simulate", "--config", cfg, "--out", tmp_path / "b", "--replicas", 500, "--seed", 2)
    assert (tmp_path / "a" / "summary.csv").read_bytes() != (tmp_path / "b" / "summary.csv").read_bytes()
    assert "# seed: 2" in (tmp_path / "b" / "summary.csv").read_text()


def test_config_error_exit_code_and_path(tmp_path, capsys):
    doc = base_doc()
    doc["model"] = dict(MODEL, kernel={"kind": "complete", "p": [0.5, 0.6]})
    cfg = write_config(tmp_path, doc)
    assert run("density", "--config", cfg, "--out", tmp_path / "o") == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and err["path"] == "model.kernel.p"


def test_missing_query_time_is_config_error(tmp_path, capsys):
    doc = base_doc()
    del doc["query"]["t"]
    cfg = write_config(tmp_path, doc)
    assert run("mass", "--config", cfg, "--out", tmp_path / "o") == 2
    assert json.loads(capsys.readouterr().err)["path"] == "query.t"


def test_runtime_error_exit_code(tmp_path, capsys):
    doc = base_doc(points=[[0.5]])
    doc["model"] = {"velocities": [[0], [1]], "kernel": {"kind": "cyclic"},
                    "waits": {"kind": "deterministic", "durations": [0.3, 0.4]}}
    cfg = write_config(tmp_path, doc)
    assert run("density", "--config", cfg, "--out", tmp_path / "o") == 3
    assert json.loads(capsys.readouterr().err)["error"] == "AtomicLaw"


def test_density_rows(tmp_path):
    cfg = write_config(tmp_path, base_doc(points=[[0.4], [0.0], [1.5]]))
    assert run("density", "--config", cfg, "--out", tmp_path / "o") == 0
    _, cols, rows = read_csv(tmp_path / "o" / "density.csv")
    assert cols == ["x1", "density", "region", "face", "formula", "terms", "remainder"]
    assert rows[0][2] == "inner" and rows[0][4] == "complete-series"
    assert rows[1][2] == "vertex" and float(rows[1][1]) == pytest.approx(0.5 * math.exp(-0.5))
    assert rows[2][2] == "outside" and float(rows[2][1]) == 0.0


def test_mass_totals(tmp_path):
    cfg = write_config(tmp_path, base_doc())
    assert run("mass", "--config", cfg, "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "mass.json").read_text())
    assert rep["total"] == pytest.approx(1.0, abs=1e-14)
    assert rep["border_mass"] == pytest.approx(math.exp(-0.5))


def test_project_reports_reduction(tmp_path):
    doc = base_doc(points=[[1.0, 1.0]])
    doc["model"] = dict(MODEL, velocities=[[0, 0], [1, 1], [2, 2]],
                        kernel={"kind": "complete", "p": [0.5, 0.25, 0.25]})
    cfg = write_config(tmp_path, doc)
    assert run("project", "--config", cfg, "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "project.json").read_text())
    assert rep["state_space_dim"] == 1 and rep["projection_rows"] == [0]
    assert rep["projected_velocities"] == [[0.0], [1.0], [2.0]]


def test_verify_identities_and_operator(tmp_path):
    doc = base_doc()
    doc["verify"] = {"suites": ["identities", "operator"], "instances": 40, "max_D": 3}
    cfg = write_config(tmp_path, doc)
    assert run("verify", "--config", cfg, "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "verify.json").read_text())
    assert rep["pass"] and rep["suites"]["operator"]["cases"][-1]["order"] == 4


def test_verify_pde_writes_table(tmp_path):
    doc = base_doc()
    doc["verify"] = {"suites": ["pde"], "levels": 3}
    cfg = write_config(tmp_path, doc)
    assert run("verify", "--config", cfg, "--out", tmp_path / "o") == 0
    _, cols, rows = read_csv(tmp_path / "o" / "pde_convergence.csv")
    assert cols == ["equation", "spacing", "residual", "order"]
    assert {r[0] for r in rows} == {"system", "scalar", "scalar_perturbed"}


def test_verify_conditioning_needs_face(tmp_path, capsys):
    doc = base_doc()
    doc["verify"] = {"suites": ["conditioning"]}
    cfg = write_config(tmp_path, doc)
    assert run("verify", "--config", cfg, "--out", tmp_path / "o") == 2
    assert json.loads(capsys.readouterr().err)["path"] == "verify.face"


def test_failed_comparison_exit_code(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, base_doc(compare_bins=4))
    monkeypatch.setattr(cli, "mass_comparison", lambda model, summary: ([], {"pass": False}))
    assert run("compare", "--config", cfg, "--out", tmp_path / "o", "--replicas", 2000) == 4
    assert json.loads((tmp_path / "o" / "compare.json").read_text())["pass"] is False


def test_regenerate_from_artifact(tmp_path):
    cfg = write_config(tmp_path, base_doc(points=[[0.2], [0.7]]))
    run("density", "--config", cfg, "--out", tmp_path / "a")
    run("density", "--config", tmp_path / "a" / "density.csv", "--out", tmp_path / "b")
    assert (tmp_path / "a" / "density.csv").read_bytes() == (tmp_path / "b" / "density.csv").read_bytes()


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, base_doc())
    res = subprocess.run([sys.executable, "-m", "velomotion", "mass", "--config", str(cfg), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "mass.csv").exists()


def _density_values(tmp_path, name, doc):
    run("density", "--config", write_config(tmp_path, doc, f"{name}.json"), "--out", tmp_path / name)
    _, _, rows = read_csv(tmp_path / name / "density.csv")
    return [float(r[2]) for r in rows], [r[5] for r in rows]


def test_density_form_and_terminal_split(tmp_path):
    model = {"velocities": [[0, 0], [1, 0], [0, 1]], "kernel": {"kind": "complete", "p": [0.5, 0.3, 0.2]},
             "rate": {"kind": "constant", "value": 1.5}}
    doc = {"model": model, "query": {"t": 1.0, "points": [[0.3, 0.3], [0.5, 0.0]]}}
    total, _ = _density_values(tmp_path, "all", doc)
    doc["run"] = {"form": "integral"}
    integral, formulas = _density_values(tmp_path, "int", doc)
    assert formulas == ["complete-integral"] * 2
    assert integral == pytest.approx(total, rel=1e-10)
    del doc["run"]
    split = []
    for h in range(3):
        doc["query"]["terminal"] = h
        split.append(_density_values(tmp_path, f"term{h}", doc)[0])
    assert [sum(c) for c in zip(*split)] == pytest.approx(total, rel=1e-12)
    assert split[2][1] == 0.0
