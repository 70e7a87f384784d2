import json
import subprocess
import sys

import numpy as np
import pytest

from bscoal import __version__
from bscoal.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERDICT, main
from bscoal.experiments import ks_distance


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_version(capsys):
    code, out, _ = run(capsys, "version")
    assert code == EXIT_OK and __version__ in out


def test_help_documents_exit_codes(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for code in ("0", "1", "2", "3"):
        assert f"  {code}  " in out
    assert "BS_COALESCENT_THREADS" in out


def test_simulate_n2(capsys):
    code, out, _ = run(capsys, "simulate", "--n", "2", "--replicas", "5", "--seed", "7")
    assert code == EXIT_OK
    rows = [line.split(",") for line in out.strip().split("\n")[1:]]
    assert len(rows) == 5
    assert all(r[3] == "1" and float(r[5]) == 0.0 for r in rows)


def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run(capsys, "simulate", "--n", "50", "--replicas", "20", "--seed", "3",
                   "--mu", "1", "--out", str(p))[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_simulate_trace(tmp_path, capsys):
    t = tmp_path / "trace.csv"
    code, out, _ = run(capsys, "simulate", "--n", "40", "--seed", "1", "--trace", str(t))
    assert code == EXIT_OK
    lines = t.read_text().strip().split("\n")
    assert lines[0] == "k,X,Z,Y,hold"
    rows = [line.split(",") for line in lines[1:]]
    assert rows[0][1] == "40" and rows[-1][1] == "1"
    assert all(int(r[1]) == int(r[2]) + int(r[3]) for r in rows)
    # the trace replays replica 0 of the CSV
    L = sum(int(r[1]) * float(r[4]) for r in rows[:-1])
    assert L == pytest.approx(float(out.split("\n")[1].split(",")[4]), rel=1e-12)


def test_simulate_usage_errors(capsys):
    assert run(capsys, "simulate", "--n", "0")[0] == EXIT_USAGE
    assert run(capsys, "simulate")[0] == EXIT_USAGE
    assert run(capsys, "simulate", "--n", "5", "--mu", "-1")[0] == EXIT_USAGE
    assert run(capsys, "bogus")[0] == EXIT_USAGE


def test_simulate_io_error(capsys):
    code, _, err = run(capsys, "simulate", "--n", "5", "--out", "/nonexistent-dir/x.csv")
    assert code == EXIT_RUNTIME and "/nonexistent-dir/x.csv" in err


def test_oracle(capsys):
    code, out, _ = run(capsys, "oracle", "--n", "3")
    d = json.loads(out)
    assert code == EXIT_OK
    assert d["L"] == pytest.approx(3) and d["E"] == pytest.approx(2.25)
    assert d["I"] == pytest.approx(0.75) and d["tau_mean"] == pytest.approx(1.75)
    assert json.loads(run(capsys, "oracle", "--n", "2")[1])["I"] == 0


def test_oracle_over_limit(capsys):
    code, _, err = run(capsys, "oracle", "--n", "100000")
    assert code == EXIT_RUNTIME and "limit" in err


def test_stable_round_trip(capsys):
    code, out, _ = run(capsys, "stable", "--quantile", "0.5")
    assert code == EXIT_OK
    q = out.strip()
    code, out, _ = run(capsys, "stable", f"--cdf={q}")
    assert float(out) == pytest.approx(0.5, abs=1e-5)
    assert float(run(capsys, "stable", "--cdf", "1e9")[1]) == pytest.approx(1.0)


def test_stable_sample(capsys, law):
    code, out, _ = run(capsys, "stable", "--sample", "100000", "--seed", "1")
    z = np.array(out.split(), dtype=float)
    assert code == EXIT_OK and len(z) == 100_000
    assert ks_distance(z, law.cdf) < 0.01


def test_stable_bad_p(capsys):
    assert run(capsys, "stable", "--quantile", "1.5")[0] == EXIT_USAGE
    assert run(capsys, "stable")[0] == EXIT_USAGE


def test_experiment_guarded_grid(tmp_path, capsys):
    rep = tmp_path / "r.json"
    code, _, _ = run(capsys, "experiment", "--n-values", "10", "12", "--replicas", "30",
                     "--report", str(rep), "--quiet")
    assert code == EXIT_VERDICT
    r = json.loads(rep.read_text())
    assert r["guard"] and r["all_pass"] is False and r["verdicts"]


def test_experiment_config_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_values": [200, 2000], "replicas": 5, "master_seed": 1,
                               "mu": 1.0}))
    out = tmp_path / "o.csv"
    rep = tmp_path / "r.json"
    code, _, _ = run(capsys, "experiment", "--config", str(cfg), "--replicas", "150",
                     "--out", str(out), "--report", str(rep), "--quiet")
    assert code in (EXIT_OK, EXIT_VERDICT)
    r = json.loads(rep.read_text())
    assert r["config"]["replicas"] == 150 and r["config"]["master_seed"] == 1
    assert len(out.read_text().strip().split("\n")) == 1 + 300
    assert code == (EXIT_OK if r["all_pass"] else EXIT_VERDICT)


def test_experiment_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_values": [], "replicas": 5}))
    assert run(capsys, "experiment", "--config", str(cfg))[0] == EXIT_USAGE
    cfg.write_text("{not json")
    assert run(capsys, "experiment", "--config", str(cfg))[0] == EXIT_USAGE
    cfg.write_text(json.dumps({"n_values": [5], "colour": "red"}))
    assert run(capsys, "experiment", "--config", str(cfg))[0] == EXIT_USAGE


def test_threads_env(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("BS_COALESCENT_THREADS", "2")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(capsys, "simulate", "--n", "100", "--replicas", "10", "--out", str(a))
    monkeypatch.delenv("BS_COALESCENT_THREADS")
    run(capsys, "simulate", "--n", "100", "--replicas", "10", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "bscoal", "version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and __version__ in r.stdout
