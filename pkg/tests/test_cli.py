import json
import subprocess
import sys

import pytest

from powertail.cli import main, run
from powertail.montecarlo import REPORT_COLUMNS, VerificationReport


def write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def run_cfg():
    return {
        "models": {"kind": "symmetric_power_law", "q": 4},
        "coefficients": "unit:64",
        "plan": {"seed": 11, "replications": 20000, "chunk_size": 4096},
        "certificate": {"kind": "main", "q": 4, "c_prob": 3},
        "t_grid": [1.5, 2.0, 2.5],
        "c_prob_target": 3,
    }


def test_bound(capsys):
    assert main(["bound", "--kind", "main", "--q", "4", "--coeff", "0.5,0.5,0.5,0.5", "--t", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,bound,probability"
    assert float(lines[1].split(",")[1]) == pytest.approx(4.7512, abs=1e-4)


def test_c0_json(capsys):
    assert main(["c0", "--json"]) == 0
    c0 = json.loads(capsys.readouterr().out)["rows"][0]["c0"]
    assert 1 < c0 < 2


def test_xi(capsys):
    assert main(["xi", "--kind", "xi2", "--y", "0.1", "0.5"]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    y, inv, bound = map(float, rows[0].split(","))
    assert inv == pytest.approx(3.889720169867429, abs=1e-10) and bound >= inv


def test_orderstats_and_trimmed(capsys):
    assert main(["orderstats", "--n", "5", "--t", "2"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 6
    assert main(["orderstats", "--n", "50", "--t", "2", "--replications", "2000", "--seed", "3"]) == 0
    assert "budget" in capsys.readouterr().out
    assert main(["trimmed", "--model", '{"kind": "pareto_tail", "p": 3}', "--n", "1000",
                 "--lam", "3", "--variant", "pareto_closed"]) == 0
    assert float(capsys.readouterr().out.splitlines()[1].split(",")[1]) == pytest.approx(1559.76, abs=0.01)


def test_trimmed_productiones_needs_growth(capsys):
    code = main(["trimmed", "--model", '{"kind": "pareto_tail", "p": 3}', "--n", "100",
                 "--lam", "3", "--variant", "productiones"])
    assert code == 2
    assert "growth-p" in capsys.readouterr().err


def test_norm(tmp_path, capsys):
    assert main(["norm", "--x", "1,1,1,0", "--r", "2", "--q", "2"]) == 0
    header, row = capsys.readouterr().out.splitlines()
    rec = dict(zip(header.split(","), map(float, row.split(","))))
    assert rec["primal"] == pytest.approx(rec["sign_formula"], abs=1e-9)
    cfg = write(tmp_path, "p.json", {"delta": 0.1, "weights": [1.0], "model": {"kind": "standard_normal"}})
    assert main(["norm", "--config", cfg, "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["rows"][0]["norm"] > 0


def test_simulate(tmp_path, capsys, run_cfg):
    run_cfg["thresholds"] = [0.5, 1.0]
    assert main(["simulate", "--config", write(tmp_path, "c.json", run_cfg), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["threshold"] for r in doc["rows"]] == [0.5, 1.0]
    assert doc["plan"]["seed"] == 11


def test_calibrate_then_verify(tmp_path, capsys, run_cfg):
    cfg = write(tmp_path, "c.json", run_cfg)
    emitted = str(tmp_path / "verify.json")
    assert main(["calibrate", "--config", cfg, "--emit-config", emitted]) == 0
    ver = json.loads(open(emitted).read())
    assert ver["plan"]["seed"] != 11 and ver["certificate"]["c_dev"] > 0
    capsys.readouterr()
    out = str(tmp_path / "report.csv")
    assert main(["verify", "--config", emitted, "--out", out]) == 0
    rows = VerificationReport.parse_csv(open(out).read())
    assert len(rows) == 3 and all(r["pass"] for r in rows)
    assert main(["verify", "--config", emitted, "--cdev", "0"]) == 1


def test_csv_and_json_agree(tmp_path, capsys, run_cfg):
    run_cfg["certificate"]["c_dev"] = 0.4
    cfg = write(tmp_path, "c.json", run_cfg)
    main(["verify", "--config", cfg])
    csv_rows = VerificationReport.parse_csv(capsys.readouterr().out)
    main(["verify", "--config", cfg, "--json"])
    doc = json.loads(capsys.readouterr().out)
    assert csv_rows == doc["rows"]
    assert list(doc["rows"][0]) == list(REPORT_COLUMNS)


def test_threads_do_not_change_output(tmp_path, capsys, run_cfg):
    cfg = write(tmp_path, "c.json", run_cfg)
    main(["verify", "--config", cfg, "--threads", "1"])
    one = capsys.readouterr().out
    main(["verify", "--config", cfg, "--threads", "8"])
    assert capsys.readouterr().out == one


def test_compare(tmp_path, capsys, run_cfg):
    run_cfg["coefficients"] = "e1:3"
    assert main(["compare", "--config", write(tmp_path, "c.json", run_cfg)]) == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header == "t,threshold,tail,mc_tail,certificate,markov,berry_esseen,bcr"


@pytest.mark.parametrize("mutate,key", [
    (lambda c: c.update(extra=1), "<root>"),
    (lambda c: c["plan"].update(seed=-1), "plan.seed"),
    (lambda c: c["plan"].update(bogus=1), "plan"),
    (lambda c: c["models"].update(kind="cauchy"), "models"),
])
def test_config_errors_name_the_key(tmp_path, capsys, run_cfg, mutate, key):
    mutate(run_cfg)
    assert main(["simulate", "--config", write(tmp_path, "c.json", run_cfg)]) == 2
    assert f"config key {key}" in capsys.readouterr().err


def test_missing_file_and_bad_json(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["simulate", "--config", str(bad)]) == 2


def test_usage_error_exit_code():
    assert run(["bound", "--kind", "main"]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "powertail", "bound", "--kind", "main", "--q", "4",
                          "--coeff", "e1:3", "--t", "1"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("t,bound")
