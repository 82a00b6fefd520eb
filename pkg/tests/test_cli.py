import json
import subprocess
import sys

import pytest

from contraction_mc.cli import main
from contraction_mc.ensemble import Ensemble


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=1))
    return p


def simulate(tmp_path, capsys, cfg, name="sim.json", threads=1):
    code = main(["simulate", str(write(tmp_path, name, cfg)), "--threads", str(threads), "--out", str(tmp_path / "runs")])
    out, err = capsys.readouterr()
    return code, (json.loads(out)["ensemble"] if code == 0 else last_json(err))


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def error(capsys):
    return last_json(capsys.readouterr().err)


def test_simulate_writes_ensemble(tmp_path, capsys):
    code, path = simulate(tmp_path, capsys, {"seed": 3, "n": 16, "size": 200})
    assert code == 0
    ens = Ensemble.read_jsonl(path)
    assert ens.size == 200 and ens.grid.size == 17
    assert len(list((tmp_path / "runs").rglob("manifest.json"))) == 1


@pytest.mark.parametrize("model", ["walk", "linearized_bm", "bm_grid"])
def test_simulate_models(tmp_path, capsys, model):
    code, path = simulate(tmp_path, capsys, {"seed": 1, "n": 4, "size": 20, "model": model})
    assert code == 0 and Ensemble.read_jsonl(path).size == 20


def test_simulate_validation_errors(tmp_path, capsys):
    code, err = simulate(tmp_path, capsys, '{\n  "seed": 1,\n  "n": 4,\n  "size": 10,\n  "n0": 0\n}')
    assert code == 2 and err["error"] == "validation" and "sim.json:5: n0" in err["message"]
    code, err = simulate(tmp_path, capsys, '{"seed": 1, "n": }')
    assert code == 2 and "sim.json:1" in err["message"]
    code, _ = simulate(tmp_path, capsys, {"seed": 1, "n": 4, "size": 10, "model": "levy"})
    assert code == 2
    assert main(["simulate", str(tmp_path / "missing.json")]) == 2
    code, _ = simulate(tmp_path, capsys, {"seed": 1, "n": 4, "size": 10}, threads=0)
    assert code == 2


def test_simulate_thread_count_does_not_change_output(tmp_path, capsys):
    cfg = {"seed": 7, "n": 32, "size": 5000}
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, one = simulate(tmp_path / "a", capsys, cfg, threads=1)
    _, three = simulate(tmp_path / "b", capsys, cfg, threads=3)
    with open(one, "rb") as f1, open(three, "rb") as f3:
        assert f1.read() == f3.read()


def test_distance_command(tmp_path, capsys):
    _, a = simulate(tmp_path, capsys, {"seed": 1, "n": 8, "size": 40}, "a.json")
    _, b = simulate(tmp_path, capsys, {"seed": 2, "n": 8, "size": 40, "model": "linearized_bm"}, "b.json")
    assert main(["distance", a, a]) == 0
    assert json.loads(capsys.readouterr().out)["value"] == 0
    csv_path = tmp_path / "rows.csv"
    assert main(["distance", a, b, "--grid", "0.5,1", "--csv", str(csv_path), "--output", str(tmp_path / "d.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["grid"] == [0.5, 1.0] and rep["value"] > 0
    assert json.loads((tmp_path / "d.json").read_text()) == rep
    assert main(["distance", a, b, "--grid", "1", "--estimator", "exact_1d", "--csv", str(csv_path)]) == 0
    capsys.readouterr()
    assert len(csv_path.read_text().splitlines()) == 3
    assert main(["distance", a, b, "--bootstrap", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["stderr"] > 0


def test_distance_errors(tmp_path, capsys):
    _, a = simulate(tmp_path, capsys, {"seed": 1, "n": 8, "size": 40}, "a.json")
    _, c = simulate(tmp_path, capsys, {"seed": 1, "n": 8, "size": 30}, "c.json")
    assert main(["distance", a, c]) == 2
    assert "--resample 30" in json.dumps(error(capsys))
    assert main(["distance", a, c, "--resample", "30"]) == 0
    capsys.readouterr()
    assert main(["distance", a, a, "--estimator", "exact_1d"]) == 2
    assert main(["distance", a, a, "--grid", "0.2,0.4", "--estimator", "exact_1d"]) == 2
    assert main(["distance", a, a, "--grid", "1.5"]) == 2
    assert main(["distance", a, str(tmp_path / "a.json")]) == 2
    assert main(["distance", a, a, "--p", "0.5"]) == 2


def test_experiment_command(tmp_path, capsys):
    cfg = write(tmp_path, "r.json", {"seed": 1})
    assert main(["experiment", "rates", "--config", str(cfg), "--out", str(tmp_path / "runs")]) == 0
    out = json.loads(capsys.readouterr().out)["output"]
    assert json.loads((tmp_path / "runs" / out.split("/")[-1] / "summary.json").read_text())
    assert main(["report", str(tmp_path / "runs")]) == 0
    assert "==" in capsys.readouterr().out
    assert main(["experiment", "nope"]) == 2
    assert "available" in json.dumps(error(capsys))
    bad = write(tmp_path, "bad.json", {"seed": 1, "ensemble_size": -5})
    assert main(["experiment", "donsker", "--config", str(bad)]) == 2
    assert main(["report", str(tmp_path / "empty")]) == 2


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "contraction_mc.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
