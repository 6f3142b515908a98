import json
import os

import pytest

from kinlab.cli import main

CONFIG = """
[model]
m = 1
grid_points = 2
eps = 0.05
n_max = 2
rate_tracer = 1.0
rate_env1 = 1.0
rate_env2 = 0.0
rate_int = 1.0
kernel_tracer = uniform
kernel_env1 = uniform
kernel_env2 = uniform
kernel_int = copy

[initial]
tracer0 = 0.7 0.3
env1 = 0.65 0.35
g = sigma:0.2
activity = 1.0

[run]
t_max = 0.5
dt = 1e-3
series_order = 1
mc_trajectories = 2000
seed = 42

[output]
format = csv
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "model.ini"
    path.write_text(CONFIG)
    return str(path)


def run_cli(*args):
    return main(list(args))


def test_cluster_verify_passes_and_writes_tables(config_path, tmp_path):
    out = str(tmp_path / "out")
    code = run_cli("run", "--config", config_path, "--kind", "cluster-verify",
                   "--out", out)
    assert code == 0
    assert os.path.exists(os.path.join(out, "cluster_verify.csv"))
    meta = json.load(open(os.path.join(out, "metadata.json")))
    assert all(check["pass"] for check in meta["checks"])
    assert meta["kind"] == "cluster-verify"
    assert "config_hash" in meta


def test_duality_sweep_passes(config_path, tmp_path):
    out = str(tmp_path / "out")
    code = run_cli("run", "--config", config_path, "--kind", "duality-sweep",
                   "--out", out)
    assert code == 0
    body = open(os.path.join(out, "duality.csv")).read()
    assert body.splitlines()[0] == "t,observable_id,lhs,rhs,abs_residual,rel_residual,K,eps"
    assert os.path.exists(os.path.join(out, "mean_values.csv"))


def test_missing_config_exits_3(tmp_path):
    code = run_cli("run", "--config", str(tmp_path / "nope.ini"),
                   "--kind", "cluster-verify", "--out", str(tmp_path / "o"))
    assert code == 3


def test_invalid_config_exits_1(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(CONFIG.replace("rate_tracer = 1.0", "rate_tracer = -2.0 1.0"))
    code = run_cli("run", "--config", str(bad), "--kind", "cluster-verify",
                   "--out", str(tmp_path / "o"))
    assert code == 1


def test_tolerance_failure_exits_2(config_path, tmp_path):
    # eps-convergence at K = 1 includes the slope check, which fails honestly
    out = str(tmp_path / "out")
    code = run_cli("run", "--config", config_path, "--kind", "eps-convergence",
                   "--out", out)
    assert code == 2
    meta = json.load(open(os.path.join(out, "metadata.json")))
    names = {c["name"]: c["pass"] for c in meta["checks"]}
    assert names["eps_sweep_smallest_residual"] is True
    assert names["eps_sweep_loglog_slope"] is False


def test_rerun_reproduces_csv_bodies(config_path, tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli("run", "--config", config_path, "--kind", "mc-vs-exact",
                   "--out", out1) == 0
    assert run_cli("run", "--config", config_path, "--kind", "mc-vs-exact",
                   "--out", out2) == 0
    body1 = open(os.path.join(out1, "mc_vs_exact.csv"), "rb").read()
    body2 = open(os.path.join(out2, "mc_vs_exact.csv"), "rb").read()
    assert body1 == body2


def test_seed_override_changes_mc_results(config_path, tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    run_cli("run", "--config", config_path, "--kind", "mc-vs-exact", "--out", out1)
    run_cli("run", "--config", config_path, "--kind", "mc-vs-exact", "--out", out2,
            "--seed", "7")
    body1 = open(os.path.join(out1, "mc_vs_exact.csv")).read()
    body2 = open(os.path.join(out2, "mc_vs_exact.csv")).read()
    assert body1 != body2


def test_fp_trajectory_and_report(config_path, tmp_path, capsys):
    out = str(tmp_path / "out")
    code = run_cli("run", "--config", config_path, "--kind", "fp-trajectory",
                   "--out", out, "--t-max", "1.0")
    assert code == 0
    header = open(os.path.join(out, "fp_trajectory.csv")).readline().strip()
    assert header == "t,species,micro_state,F_value,mass_drift"
    code = run_cli("report", out)
    assert code == 0
    text = capsys.readouterr().out
    assert "fp_mass_drift" in text
    assert os.path.exists(os.path.join(out, "plot_data.csv"))


def test_report_missing_directory_exits_3(tmp_path):
    assert run_cli("report", str(tmp_path / "missing")) == 3


def test_json_output_format(config_path, tmp_path):
    out = str(tmp_path / "out")
    code = run_cli("run", "--config", config_path, "--kind", "cluster-verify",
                   "--out", out, "--format", "json")
    assert code == 0
    rows = json.load(open(os.path.join(out, "cluster_verify.json")))
    assert rows and "residual" in rows[0]


def test_eps_override(config_path, tmp_path):
    out = str(tmp_path / "out")
    code = run_cli("run", "--config", config_path, "--kind", "duality-sweep",
                   "--out", out, "--eps", "0.0")
    assert code == 0
    body = open(os.path.join(out, "duality.csv")).read()
    assert ",0.0" in body.splitlines()[1]
