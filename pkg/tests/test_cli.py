import csv
import json
import os
import subprocess
import sys

import pytest

from spare import cli
from spare.cli import ExperimentSpec, main, parse_int_list, format_int_list
from spare.desim import ConfigError, Scheme

SMALL_SPEC = """
[cluster]
horizon_steps = 150
max_ttt_ratio = 25

[sweep]
schemes = spare_ckpt, rep_ckpt
n_groups = 60
allreduce_time = 2
spare_ckpt_redundancy = 3, 5
rep_ckpt_redundancy = 2
trials = 2
base_seed = 11
"""


def write_spec(tmp_path, text=SMALL_SPEC):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return path


# -- helpers ----------------------------------------------------------------

def test_int_list_round_trip():
    assert parse_int_list("2-5, 8") == [2, 3, 4, 5, 8]
    assert format_int_list([2, 3, 4, 5]) == "2-5"
    assert format_int_list([3, 5]) == "3, 5"
    with pytest.raises(cli.UsageError):
        parse_int_list("5-2")


def test_supported_redundancies():
    assert cli.supported_redundancies(200) == list(range(2, 13))
    assert 3 not in cli.supported_redundancies(6)


# -- init / spec round trip -------------------------------------------------

@pytest.mark.parametrize("ns", [None, ["200"], ["200", "600", "1000"]])
def test_init_round_trip(tmp_path, ns):
    out = tmp_path / "t.ini"
    argv = ["init", "-o", str(out)] + (["--n-groups", *ns] if ns else [])
    assert main(argv) == 0
    text = out.read_text()
    spec = ExperimentSpec.from_ini(text)
    assert spec.to_ini() == text
    assert ExperimentSpec.from_ini(spec.to_ini()) == spec


def test_init_template_values():
    spec = ExperimentSpec.reference((200, 600))
    assert spec.allreduce_time == (2.0, 6.0)
    assert spec.base.node_mtbf == 300 and spec.base.restart_cost == 3600
    assert spec.trials == 3
    assert len(spec.cells()) == len(spec.spare_redundancy) * 2 + 3 * 2 + 2


@pytest.mark.parametrize("mutate,msg", [
    (lambda t: t.replace("schemes = spare_ckpt, rep_ckpt", "schemes ="), "empty sweep"),
    (lambda t: t.replace("n_groups = 60", "n_groups ="), "empty sweep"),
    (lambda t: t.replace("trials = 2", "trials = 0"), "trials"),
    (lambda t: t.replace("spare_ckpt_redundancy = 3, 5", "spare_ckpt_redundancy = 40"), "redundancy"),
    (lambda t: t.replace("horizon_steps = 150", "horizon_step = 150"), "unknown"),
    (lambda t: t.replace("[sweep]", "[sweeps]"), "unknown section"),
    (lambda t: t.replace("allreduce_time = 2", "allreduce_time = 2, 3"), "allreduce_time"),
    (lambda t: t.replace("horizon_steps = 150", "horizon_steps = abc"), "bad value"),
])
def test_spec_validation(mutate, msg):
    with pytest.raises(ConfigError, match=msg):
        ExperimentSpec.from_ini(mutate(SMALL_SPEC))


# -- analyze ----------------------------------------------------------------

def test_analyze_sweep_reports_rstar(capsys):
    assert main(["analyze", "--n", "600"]) == 0
    out = capsys.readouterr().out
    assert "r*=10" in out.splitlines()
    assert " *" in out


def test_analyze_single_r(capsys):
    assert main(["analyze", "--n", "200", "--r", "2"]) == 0
    out = capsys.readouterr().out
    row = [line for line in out.splitlines() if line.split()[:1] == ["2"]][0]
    assert float(row.split()[1]) == pytest.approx(12.5, abs=0.05)
    assert "r*=8" in out


def test_analyze_csv(capsys):
    assert main(["analyze", "--n", "200", "--r", "2-4", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "r,mu,S_bar,S_bar_lb,T_c,A,J"
    assert len(lines) == 1 + 3 + 1  # header, rows, r* line


def test_missing_required_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["analyze"])
    assert exc.value.code == 2


@pytest.mark.parametrize("argv", [
    ["analyze", "--n", "200", "--r", "300"],
    ["analyze", "--n", "1"],
    ["analyze", "--n", "200", "--node-mtbf", "0"],
    ["montecarlo", "--n", "5", "--r", "3"],
    ["montecarlo", "--n", "200", "--r", "3", "--trials", "0"],
])
def test_validation_exit_two(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spare", "analyze"], capture_output=True, text=True)
    assert proc.returncode == 2


# -- montecarlo -------------------------------------------------------------

def test_montecarlo_golden_header(tmp_path):
    out = tmp_path / "mc.csv"
    assert main(["montecarlo", "--n", "200", "--r", "2-3", "--trials", "1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "r,mu_theory,mu_sim,stack_theory,stack_sim"
    rows = list(csv.DictReader(lines))
    assert [int(r["r"]) for r in rows] == [2, 3]
    # a single trial gives an integer failure count
    assert float(rows[0]["mu_sim"]).is_integer()


def test_montecarlo_n600_r20(capsys):
    assert main(["montecarlo", "--n", "600", "--r", "20", "--trials", "1000", "--seed", "0"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert float(rows[0]["mu_sim"]) == pytest.approx(426.4, rel=0.03)
    assert float(rows[0]["mu_theory"]) == pytest.approx(424.2, abs=0.05)


def test_montecarlo_unwritable_path(tmp_path, capsys):
    target = tmp_path / "missing_dir" / "mc.csv"
    assert main(["montecarlo", "--n", "200", "--r", "2", "--trials", "1", "--out", str(target)]) == 1


# -- simulate ---------------------------------------------------------------

def test_simulate_report_and_summary(tmp_path, capsys):
    spec = write_spec(tmp_path)
    out = tmp_path / "res"
    assert main(["simulate", str(spec), "--out-dir", str(out), "--workers", "1"]) == 0
    text = (out / "report.csv").read_text()
    assert text.splitlines()[0] == ",".join(cli.REPORT_HEADER)
    rows = list(csv.DictReader(text.splitlines()))
    per_trial = [r for r in rows if r["trial"] != "mean"]
    means = [r for r in rows if r["trial"] == "mean"]
    assert len(per_trial) == 3 * 2 and len(means) == 3
    for agg in means:
        group = [r for r in per_trial if (r["scheme"], r["r"]) == (agg["scheme"], agg["r"])]
        for key in ("ttt_ratio", "availability", "mean_stacks", "restarts", "failures"):
            assert float(agg[key]) == pytest.approx(sum(float(g[key]) for g in group) / len(group))
    summary = json.loads((out / "summary.json").read_text())
    assert {b["scheme"] for b in summary["best"]} == {"spare_ckpt", "rep_ckpt"}
    assert summary["errors"] == [] and summary["cells"] == 3
    assert "best r=" in capsys.readouterr().out


def test_simulate_deterministic_bytes(tmp_path):
    spec = write_spec(tmp_path)
    blobs = []
    for name, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["simulate", str(spec), "--out-dir", str(tmp_path / name), "--workers", workers]) == 0
        blobs.append(((tmp_path / name / "report.csv").read_bytes(),
                      (tmp_path / name / "summary.json").read_bytes()))
    assert blobs[0] == blobs[1] == blobs[2]


def test_simulate_seed_changes_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", str(write_spec(tmp_path)), "--out-dir", str(a), "--workers", "1"])
    other = write_spec(tmp_path, SMALL_SPEC.replace("base_seed = 11", "base_seed = 12"))
    main(["simulate", str(other), "--out-dir", str(b), "--workers", "1"])
    assert (a / "report.csv").read_bytes() != (b / "report.csv").read_bytes()


def test_simulate_empty_sweep(tmp_path, capsys):
    spec = write_spec(tmp_path, SMALL_SPEC.replace("schemes = spare_ckpt, rep_ckpt", "schemes ="))
    assert main(["simulate", str(spec), "--out-dir", str(tmp_path / "o")]) == 2
    assert "empty sweep" in capsys.readouterr().err


def test_simulate_missing_spec(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.ini")]) == 2


def test_simulate_cell_failure_is_recorded(tmp_path, monkeypatch):
    real = cli.simulate

    def flaky(config):
        if config.scheme is Scheme.REP_CKPT:
            raise RuntimeError("boom")
        return real(config)

    monkeypatch.setattr(cli, "simulate", flaky)
    out = tmp_path / "res"
    assert main(["simulate", str(write_spec(tmp_path)), "--out-dir", str(out), "--workers", "1"]) == 1
    rows = list(csv.DictReader((out / "report.csv").read_text().splitlines()))
    bad = [r for r in rows if r["scheme"] == "rep_ckpt"]
    assert all(r["status"].startswith("error") for r in bad)
    assert any("boom" in r["status"] for r in bad)
    assert all(r["status"] == "ok" for r in rows if r["scheme"] == "spare_ckpt")
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["errors"]) == 2


def test_workers_env(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.default_workers() == 3
    monkeypatch.setenv(cli.WORKERS_ENV, "x")
    assert cli.default_workers() == (os.cpu_count() or 1)


def test_trial_seed_stable():
    assert cli.trial_seed(0, 0) == cli.trial_seed(0, 0)
    assert len({cli.trial_seed(0, t) for t in range(20)}) == 20
