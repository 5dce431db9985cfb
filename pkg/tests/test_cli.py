import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from spde_lab.cli import main, run_scenario
from spde_lab.output import read_snapshots
from spde_lab.scenarios import builtin_config

LISTED = [
    "example1_blowup", "example2_aux", "krylov_blowup", "heat_manufactured", "additive_noise_benchmark",
    "transport_identity", "compat_dichotomy", "picard_reaction", "local_regularity", "decomposition_crosscheck",
]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    names = [line.split()[0].split("(")[0] for line in out.splitlines() if line and not line.startswith(" ")]
    assert names == LISTED
    assert "anchor:" in out
    for req in ("lambda", "epsilon", "gamma"):
        assert f"[required: {req}]" in out


def test_example2_exact(tmp_path):
    out = run_scenario("example2_aux", out=tmp_path / "e2")
    rows = read_rows(out / "norms.csv")
    assert rows[0]["norm_kind"] == "MaxError"
    assert float(rows[0]["value"]) <= 1e-8


def test_example2_parameter_regenerates(tmp_path):
    out = run_scenario("example2_aux", ["parameters.sigma0=0.5"], out=tmp_path / "e2")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["effective_parameters"]["boundary_data"]["rate"] == 2.0
    assert float(read_rows(out / "norms.csv")[0]["value"]) <= 1e-8


def test_zero_scenario_norms_vanish(tmp_path):
    out = run_scenario("zero", resolution=16, out=tmp_path / "z")
    rows = read_rows(out / "norms.csv")
    assert {r["norm_kind"] for r in rows} == {"Lp", "W2p"}
    assert all(float(r["value"]) == 0.0 for r in rows)


def test_reruns_byte_identical(tmp_path):
    args = dict(paths=4, resolution=16)
    a = run_scenario("example1_blowup", ["analysis.0.refine=[8,16,32]"], out=tmp_path / "a", **args)
    b = run_scenario("example1_blowup", ["analysis.0.refine=[8,16,32]"], out=tmp_path / "b", **args)
    assert (a / "refinement.csv").read_bytes() == (b / "refinement.csv").read_bytes()
    rows = read_rows(a / "refinement.csv")
    assert len(rows) == 3 and rows[1]["growth_ratio"]


def test_manifest_and_hash(tmp_path, monkeypatch):
    monkeypatch.setenv("SPDE_LAB_OUT", str(tmp_path))
    a = run_scenario("zero", resolution=16)
    b = run_scenario("zero", resolution=16, seed=7)
    assert a.parent == tmp_path and a != b
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["scenario_hash"] != mb["scenario_hash"]
    assert a.name.endswith(ma["scenario_hash"][:12])
    assert ma["effective_parameters"]["resolution"] == 16
    for f in ma["files"]:
        assert (a / f).exists()
    assert set(ma["files"]) >= {"norms.csv", "report.json", "manifest.json"}
    assert ma["waived_checks"] is False


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = builtin_config("zero")
    cfg["coeffs"] = {}
    assert main(["run", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and "coeffs" in err["message"]


def test_set_unknown_path_exit_2(capsys):
    assert main(["run", "zero", "--set", "runs.pathz=3"]) == 2


def _incompatible(tmp_path):
    cfg = builtin_config("heat_manufactured")
    cfg["coefficients"]["sigma"] = 1.0
    cfg["noise"]["modes"] = 1
    cfg["analysis"] = [{"kind": "Lp", "p": 2}]
    return write_config(tmp_path, cfg)


def test_unexpected_incompatibility_aborts(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", _incompatible(tmp_path), "--out", str(out), "--resolution", "16"]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 3 and "compatibility" in err["message"]
    assert not out.exists()


def test_waive_checks_recorded(tmp_path):
    out = run_scenario(_incompatible(tmp_path), resolution=16, out=tmp_path / "o", waive_checks=True)
    manifest = json.loads((out / "manifest.json").read_text())
    report = json.loads((out / "report.json").read_text())
    assert manifest["waived_checks"] is True
    assert report["checks"]["passed"] is False and report["checks"]["waived"] is True


def test_check_command(tmp_path, capsys):
    assert main(["check", "heat_manufactured"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["compatibility"]["pass"]
    assert main(["check", _incompatible(tmp_path)]) == 3
    res = json.loads(capsys.readouterr().out)
    assert res["compatibility"]["max_residual"] == pytest.approx(1.0)


def test_expected_incompatibility_runs(tmp_path):
    out = run_scenario("example1_blowup", ["analysis.0.refine=[8,16,32]"], paths=2, out=tmp_path / "o")
    report = json.loads((out / "report.json").read_text())
    assert report["checks"]["compatibility"]["pass"] is False
    assert report["checks"]["compatibility"]["expected_incompatible"] is True


def test_required_parameter_missing(capsys):
    assert main(["run", "krylov_blowup"]) == 2
    assert "lambda" in json.loads(capsys.readouterr().err)["message"]


def test_snapshots_round_trip(tmp_path):
    out = run_scenario("heat_manufactured", ["runs.stride=8", "analysis=[]"], resolution=8, out=tmp_path / "s")
    manifest = json.loads((out / "manifest.json").read_text())
    assert "snapshots/path_00000.bin" in manifest["files"]
    vals, num_steps, stride = read_snapshots(out / "snapshots" / "path_00000.bin")
    from spde_lab.noise import TimeGrid

    tg = TimeGrid.from_dt(0.25, 1 / 64)
    assert num_steps == tg.num_steps and stride == 8
    assert vals.shape == (tg.num_steps // 8 + 1, 9)
    from spde_lab.config import load_config
    from spde_lab.noise import sample_wiener_bundle
    from spde_lab.solver import solve_direct

    _, sc = load_config("heat_manufactured", ["runs.stride=8", "analysis=[]", "resolution=8"])
    grid, tg2 = sc.discretize()
    ref = solve_direct(sc.problem(), sample_wiener_bundle((sc.seed, 0), 0, tg2), grid, tg2, stride=8)
    assert vals.tobytes() == ref.values.tobytes()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spde_lab", "list-scenarios"], capture_output=True, text=True)
    assert res.returncode == 0 and "heat_manufactured" in res.stdout
