import csv
import io
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from pmjp.cli import main


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture
def sir_obs(tmp_path):
    p = tmp_path / "sir_obs.csv"
    p.write_text("time,S,I,R\n0.0,10,5,0\n1.0,8,5,2\n2.0,4,7,4\n3.0,3,5,7\n")
    return p


@pytest.fixture
def bd_obs(tmp_path):
    p = tmp_path / "bd_obs.csv"
    p.write_text("time,X\n0.0,10\n0.5,14\n1.0,12\n")
    return p


# ---------------------------------------------------------------------------
# simulate

def test_simulate_lv_twenty_rows(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--model", "lv", "--init", "5,10", "--t-end", "5", "--n-obs", "20",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    obs = read_csv(out / "observations.csv")
    assert len(obs) == 20 and list(obs[0]) == ["time", "X", "Y"]
    traj = read_csv(out / "trajectory.csv")
    assert float(traj[-1]["time"]) == 5.0
    assert obs[0]["X"] == "5" and obs[0]["Y"] == "10"


def test_simulate_negative_theta_names_parameter(tmp_path, capsys):
    code = main(["simulate", "--model", "lv", "--theta", "0.02,-0.5,0.5,0.025", "--t-end", "1",
                 "--out", str(tmp_path / "x")])
    assert code == 2
    assert "theta[1]" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_simulate_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--model", "sir-finite", "--t-end", "4", "--seed", "11",
                     "--out", str(tmp_path / d)]) == 0
    for f in ("trajectory.csv", "observations.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_explicit_times(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--model", "birth-death", "--theta", "5,1", "--init", "3", "--t-end", "2",
                 "--obs-times", "0 0.5 2", "--out", str(out)]) == 0
    assert [r["time"] for r in read_csv(out / "observations.csv")] == ["0.0", "0.5", "2.0"]


def test_simulate_bad_inputs(tmp_path):
    base = ["simulate", "--model", "lv", "--out", str(tmp_path / "o")]
    assert main(base + ["--t-end", "0"]) == 2
    assert main(base + ["--t-end", "1", "--init", "1,2,3"]) == 2
    assert main(base + ["--t-end", "1", "--theta", "1,2"]) == 2
    assert main(["simulate", "--model", "no-such-model.txt", "--t-end", "1", "--out", str(tmp_path)]) == 2
    assert main(["simulate"]) == 2


# ---------------------------------------------------------------------------
# infer

def test_infer_gibbs_summary_has_psrf(tmp_path, sir_obs):
    out = tmp_path / "gibbs"
    code = main(["infer", "--model", "sir-finite", "--observations", str(sir_obs), "--algorithm", "gibbs",
                 "--iterations", "30", "--chains", "2", "--seed", "5", "--keep-trajectories", "10",
                 "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert set(summary["parameters"]) == {"theta_0", "theta_1"}
    for entry in summary["parameters"].values():
        assert "psrf" in entry and np.isfinite(entry["psrf"])
    merged = read_csv(out / "samples.csv")
    assert len(merged) == 60 and {r["chain"] for r in merged} == {"0", "1"}
    assert (out / "samples_chain0.csv").exists() and (out / "samples_chain1.csv").exists()
    assert (out / "trajectories" / "chain1_iter20.csv").exists()
    assert "wall_minutes" in json.loads((out / "timing.json").read_text())


def test_infer_trunc_gibbs_logs_m(tmp_path, sir_obs):
    out = tmp_path / "tg"
    assert main(["infer", "--model", "sir-finite", "--observations", str(sir_obs), "--algorithm",
                 "trunc-gibbs", "--iterations", "25", "--schedule-a", "0.75", "--out", str(out)]) == 0
    rows = read_csv(out / "samples_chain0.csv")
    assert list(rows[0]) == ["iteration", "theta_0", "theta_1", "accepted", "m", "wall_ms"]
    ms = [int(r["m"]) for r in rows]
    assert len(ms) == 25 and min(ms) >= 1


def test_infer_is_reproducible(tmp_path, sir_obs):
    args = ["infer", "--model", "sir-finite", "--observations", str(sir_obs), "--algorithm", "pm-mh",
            "--proposal-sd", "0.02,0.15", "--iterations", "20", "--chains", "2", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--workers", "2", "--out", str(tmp_path / "b")]) == 0
    for f in ("samples.csv", "summary.json"):
        a, b = (tmp_path / "a" / f).read_bytes(), (tmp_path / "b" / f).read_bytes()
        if f == "summary.json":
            # the worker count feeds the config digest, everything else must match
            ja, jb = json.loads(a), json.loads(b)
            assert ja["metadata"].pop("config_digest") != jb["metadata"].pop("config_digest")
            assert ja == jb
        else:
            assert a == b
    assert main(args + ["--out", str(tmp_path / "c")]) == 0
    for f in ("samples.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()


def test_infer_missing_observations(tmp_path):
    assert main(["infer", "--model", "sir-finite", "--observations", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "o")]) == 2


def test_infer_pm_mh_needs_sd(tmp_path, sir_obs):
    assert main(["infer", "--model", "sir-finite", "--observations", str(sir_obs), "--algorithm", "pm-mh",
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["infer", "--model", "sir-finite", "--observations", str(sir_obs), "--iterations", "5",
                 "--burn-in", "5", "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------------------
# loglik

def test_loglik_thousand_reps(tmp_path, bd_obs):
    out = tmp_path / "ll"
    args = ["loglik", "--model", "birth-death", "--observations", str(bd_obs), "--theta", "15,1",
            "--schedule-a", "0.95", "--reps", "1000", "--seed", "4"]
    assert main(args + ["--out", str(out)]) == 0
    rows = read_csv(out / "loglik.csv")
    assert len(rows) == 1000
    report = json.loads((out / "cv_report.json").read_text())
    assert report["cv"] > 0 and report["reps"] == 1000 and report["schema_version"] == 1
    assert main(args + ["--out", str(tmp_path / "ll2")]) == 0
    assert json.loads((tmp_path / "ll2" / "cv_report.json").read_text())["cv"] == report["cv"]


@pytest.mark.parametrize("a", ["0", "1", "1.5", "-0.1"])
def test_loglik_bad_schedule(tmp_path, bd_obs, a):
    assert main(["loglik", "--model", "birth-death", "--observations", str(bd_obs), "--theta", "15,1",
                 "--schedule-a", a, "--reps", "10", "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------------------
# diagnose

def write_chain(path, values):
    lines = ["iteration,theta_0,theta_1,accepted,m,wall_ms"]
    lines += [f"{i},{a!r},{b!r},1,0,0.1" for i, (a, b) in enumerate(values)]
    path.write_text("\n".join(lines) + "\n")


def test_diagnose_multi_chain(tmp_path, capsys):
    rng = np.random.default_rng(0)
    files = []
    for c in range(3):
        p = tmp_path / f"c{c}.csv"
        write_chain(p, rng.standard_normal((200, 2)).tolist())
        files.append(str(p))
    assert main(["diagnose", *files]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_chains"] == 3
    assert abs(report["parameters"]["theta_0"]["psrf"] - 1.0) < 0.05


def test_diagnose_single_chain_is_usage_error(tmp_path):
    p = tmp_path / "c.csv"
    write_chain(p, np.ones((50, 2)).tolist())
    assert main(["diagnose", str(p)]) == 2


def test_diagnose_malformed(tmp_path):
    good, bad = tmp_path / "g.csv", tmp_path / "b.csv"
    write_chain(good, np.random.default_rng(1).standard_normal((50, 2)).tolist())
    bad.write_text("iteration,theta_0,theta_1\n0,0.1,oops\n")
    assert main(["diagnose", str(good), str(bad)]) == 2
    (tmp_path / "n.csv").write_text("a,b\n1,2\n")
    assert main(["diagnose", str(good), str(tmp_path / "n.csv")]) == 2


def test_console_script_runs(tmp_path):
    exe = shutil.which("pmjp")
    cmd = [exe] if exe else [sys.executable, "-m", "pmjp.cli"]
    res = subprocess.run(cmd + ["simulate", "--model", "lv", "--theta", "0.02,-1,0.5,0.025", "--t-end", "1",
                                "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 2 and "theta[1]" in res.stderr
