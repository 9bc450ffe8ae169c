import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from twoscale.cli import main
from twoscale.integrate import Trajectory, read_csv
from twoscale.network import build_spec, dump_config, paper_example
from twoscale.plotting import Series, emit_plot
from twoscale.study import AssumptionFailure, emit_csv, run_study

ISOLATED = {(1, 2): "1", (2, 1): "2", (3, 4): "1", (4, 3): "1"}


def test_isolated_clusters_keep_aggregates_fixed():
    spec = build_spec([[1, 2], [3, 4]], ISOLATED, eps=0.1, horizon=5.0, x0=[1, 2, 3, 5])
    report = run_study(spec, [0.1], horizon_ts=0.5, grid=200)
    assert report.sup_err_y[0] < 1e-9
    assert report.sup_err_z[0] < 1e-6
    assert report.consensus_spread[0] > 1.0


def test_failing_assumption_refuses_with_witness():
    weights = {**ISOLATED, (1, 3): "0.5", (3, 1): "0.5"}
    spec = build_spec([[1, 2], [3, 4]], weights, eps=1.0, horizon=5.0, x0=[1, 2, 3, 5])
    with pytest.raises(AssumptionFailure, match="A3") as info:
        run_study(spec, [1.0, 0.1], horizon_ts=0.5)
    assert "witness A3" in str(info.value)
    assert not info.value.report.a3_holds


def test_report_invariants_on_paper_example():
    report = run_study(paper_example(), [1.0, 0.2], horizon_ts=3.0, grid=500)
    errs = np.array(report.sup_err_y + report.sup_err_z)
    assert np.all(np.isfinite(errs)) and np.all(errs >= 0)
    assert report.grid_size == 500 and len(report.runs[0].tf) == 500
    run = report.runs[1]
    assert report.sup_err_y[1] == np.max(np.abs(run.y_hat - run.y_s))
    assert report.tf_horizons == [3.0, 15.0]
    json.loads(report.to_json())


def test_empty_plot_is_an_error(tmp_path):
    with pytest.raises(ValueError, match="nothing to plot"):
        emit_plot([], tmp_path / "empty.svg")


def test_two_series_plot_is_well_formed(tmp_path):
    x = np.linspace(0, 1, 20)
    path = tmp_path / "plot.svg"
    emit_plot([Series("true", x, x ** 2), Series("approx", x, x, dashed=True)], path, "demo")
    assert path.stat().st_size > 0
    root = ET.parse(path).getroot()
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 2
    assert "stroke-dasharray" in lines[1].attrib and "stroke-dasharray" not in lines[0].attrib


def test_emit_csv_round_trip(tmp_path):
    report = run_study(paper_example(), [0.2], horizon_ts=1.0, grid=50)
    run = report.runs[0]
    traj = Trajectory(run.ts, run.y_hat, {})
    emit_csv(traj, tmp_path / "y.csv", ["y1", "y2"])
    again = read_csv(tmp_path / "y.csv")
    np.testing.assert_array_equal(again.states, run.y_hat)


# -- command line -------------------------------------------------------------


def test_cli_check_example(capsys):
    assert main(["check"]) == 0
    assert "A1 intra-cluster cut balance: holds" in capsys.readouterr().out


def test_cli_check_json(capsys):
    assert main(["check", "--json", "--grid", "100"]) == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(records) == 4


def test_cli_assumption_failure_exit_code(tmp_path):
    spec = build_spec([[1, 2]], {(1, 2): "1"})
    config = tmp_path / "one_way.toml"
    config.write_text(dump_config(spec))
    assert main(["check", "--config", str(config)]) == 2


def test_cli_check_reports_missing_averaging_limit(tmp_path, capsys):
    weights = {**ISOLATED, (1, 3): "0.01", (3, 1): "0.01"}
    spec = build_spec([[1, 2], [3, 4]], weights, eps=0.02, horizon=5.0)
    config = tmp_path / "unscaled.toml"
    config.write_text(dump_config(spec))
    assert main(["check", "--config", str(config)]) == 2
    assert "A4 averaging limit: FAILS" in capsys.readouterr().out


def test_cli_bad_config_exit_code(tmp_path, capsys):
    config = tmp_path / "bad.toml"
    config.write_text('clusters = [[1, 2]]\n[w]\n1.2 = "sin t"\n')
    assert main(["check", "--config", str(config)]) == 4
    assert "expected '('" in capsys.readouterr().err
    assert main(["check", "--config", str(tmp_path / "missing.toml")]) == 4


def test_cli_global_flags_before_subcommand(tmp_path):
    out = tmp_path / "sim"
    assert main(["--out", str(out), "simulate", "--horizon", "1"]) == 0
    assert (out / "trajectory.csv").exists()


def test_cli_simulate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / name), "--horizon", "2"]) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_cli_decompose_writes_matrices(tmp_path):
    assert main(["decompose", "--out", str(tmp_path), "--times", "0,1.5"]) == 0
    J = np.loadtxt(tmp_path / "J_t0.csv", delimiter=",")
    assert J.shape == (2, 8)
    assert (tmp_path / "A22_t1.5.csv").exists()


def test_cli_reduce(tmp_path, capsys):
    assert main(["reduce", "--out", str(tmp_path), "--horizon", "5"]) == 0
    out = capsys.readouterr().out
    assert "A_av" in out and "A4 residual" in out
    assert (tmp_path / "slow.csv").exists() and (tmp_path / "boundary_layer.csv").exists()


def test_cli_study_writes_bundle(tmp_path):
    assert main(["study", "--out", str(tmp_path), "--eps-list", "0.5,0.2",
                 "--horizon-ts", "2", "--grid", "200"]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["eps_values"] == [0.5, 0.2]
    assert (tmp_path / "aggregates_eps0.5.svg").exists()
    assert (tmp_path / "trajectories_eps0.2.csv").exists()
