import json

import numpy as np
from click.testing import CliRunner

from corrquant import scenario as sc
from corrquant import serialize
from corrquant.cli import main


def write_assemblage(path):
    asm = sc.steer(sc.werner(0.95), sc.paulis("XZ"))
    serialize.save(path, asm)
    return asm


def test_quantify_incompat(tmp_path):
    path = tmp_path / "ms.json"
    serialize.save(path, sc.paulis("XZ"))
    runner = CliRunner()
    res = runner.invoke(main, ["quantify", "incompat", "-k", "random_robustness",
                               "-i", str(path)])
    assert res.exit_code == 0, res.output
    payload = json.loads(res.output)
    assert abs(payload["value"] - (np.sqrt(2) - 1)) < 1e-6


def test_quantify_steer_and_certificate(tmp_path):
    path = tmp_path / "asm.json"
    write_assemblage(path)
    runner = CliRunner()
    res = runner.invoke(main, ["quantify", "steer", "-k", "SR_c", "-i", str(path)])
    assert res.exit_code == 0, res.output
    value = json.loads(res.output)["value"]
    res2 = runner.invoke(main, ["certificate", "-i", str(path), "-k", "SR_c"])
    assert res2.exit_code == 0, res2.output
    cert = json.loads(res2.output)
    assert abs(cert["violation"] - value) < 1e-6


def test_quantify_nonlocal(tmp_path):
    beh = sc.measure(sc.steer(sc.werner(1.0), sc.paulis("XZ")),
                     sc.bloch_measurements([np.array([1, 0, 1]) / np.sqrt(2),
                                            np.array([1, 0, -1]) / np.sqrt(2)]))
    path = tmp_path / "beh.json"
    serialize.save(path, beh)
    runner = CliRunner()
    res = runner.invoke(main, ["quantify", "nonlocal", "-k", "NLR_mar",
                               "-i", str(path)])
    assert res.exit_code == 0, res.output
    payload = json.loads(res.output)
    assert abs(payload["value"] - (np.sqrt(2) - 1)) < 1e-6
    assert payload["certified_lower_bound"] is False


def test_validation_exit_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\"type\": \"behaviour\", \"mA\": 1}")
    runner = CliRunner()
    res = runner.invoke(main, ["quantify", "nonlocal", "-k", "NLR", "-i",
                               str(path)])
    assert res.exit_code == 2
    # wrong object type also exits 2
    path2 = tmp_path / "ms.json"
    serialize.save(path2, sc.paulis("XZ"))
    res2 = runner.invoke(main, ["quantify", "steer", "-k", "SR", "-i", str(path2)])
    assert res2.exit_code == 2


def test_sweep_command(tmp_path):
    spec = {"state_family": "werner", "grid": {"start": 0.2, "stop": 0.5,
                                               "num": 2},
            "kinds": ["SR_red"], "scenario": "steering"}
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out_path = tmp_path / "sweep.csv"
    runner = CliRunner()
    res = runner.invoke(main, ["sweep", "-s", str(spec_path), "-o", str(out_path)])
    assert res.exit_code == 0, res.output
    assert out_path.read_text().startswith("parameter,kind,value")


def test_seesaw_command_deterministic(tmp_path):
    runner = CliRunner()
    args = ["seesaw", "-t", str(np.pi / 4), "-k", "NLR_mar", "-r", "1",
            "-S", "11", "-l", "1"]
    r1 = runner.invoke(main, args)
    r2 = runner.invoke(main, args)
    assert r1.exit_code == 0, r1.output
    assert json.loads(r1.output)["value"] == json.loads(r2.output)["value"]


def test_project_ns_command(tmp_path):
    rng = np.random.default_rng(0)
    counts = rng.integers(100, 500, size=(2, 2, 2, 2))
    path = tmp_path / "counts.json"
    path.write_text(json.dumps({"counts": counts.tolist()}))
    runner = CliRunner()
    res = runner.invoke(main, ["project-ns", "-i", str(path)])
    assert res.exit_code == 0, res.output
    payload = json.loads(res.output)
    assert payload["signalling"] is False
    assert payload["divergence"] >= 0


def test_reproduce_table2_refused(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["reproduce", "table2", "-d", str(tmp_path)])
    assert res.exit_code == 2
    assert "not reproducible" in res.output or "not reproducible" in (res.stderr or "")
