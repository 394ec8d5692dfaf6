import json

import numpy as np
import pytest

from flownet import NonConvergenceError, bundled_scenario_path, write_scenario
from flownet.cli import main
from flownet.scenario_io import read_trajectory_csv

from conftest import constant_scenario


def run_cli(capsys, *argv) -> tuple[int, dict]:
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


@pytest.fixture()
def single_cell_file(tmp_path):
    sc = constant_scenario(cap=1.0, lam=0.3, x0=0.5, horizon=2.0)
    path = tmp_path / "cell.json"
    write_scenario(sc, path)
    return path


class TestEquilibrium:
    def test_prints_inflow_for_isolated_link(self, capsys, single_cell_file):
        code, payload = run_cli(capsys, "equilibrium", "--scenario", str(single_cell_file))
        assert code == 0
        assert payload["segments"][0]["equilibrium"]["e1"] == pytest.approx(0.3)

    def test_multi_segment_inflow_flagged(self, capsys, tmp_path):
        import dataclasses

        from flownet import InflowSignal

        sc = constant_scenario(cap=1.0, lam=0.3, x0=0.5)
        sc = dataclasses.replace(
            sc,
            inflow=InflowSignal(np.array([0.0, 1.0]), np.array([[0.3], [0.6]])),
        )
        path = tmp_path / "two_segment.json"
        write_scenario(sc, path)
        code, payload = run_cli(capsys, "equilibrium", "--scenario", str(path))
        assert code == 0
        assert len(payload["segments"]) == 2
        assert "note" in payload
        assert payload["segments"][1]["equilibrium"]["e1"] == pytest.approx(0.6)


class TestVerify:
    def test_exit_zero_on_bundled_chain(self, capsys):
        code, payload = run_cli(
            capsys, "verify", "--scenario", str(bundled_scenario_path("two_cell_chain"))
        )
        assert code == 0
        assert payload["ok"] is True
        assert all(c["passed"] for c in payload["checks"])

    def test_exit_zero_on_junction_network(self, capsys):
        code, payload = run_cli(
            capsys,
            "verify",
            "--scenario",
            str(bundled_scenario_path("two_junction_gpa")),
        )
        assert code == 0
        assert payload["ok"] is True

    def test_exit_three_when_tolerance_unreachable(self, capsys):
        # discretization error cannot shrink below the grid step, so an
        # absurdly tight tolerance must surface as an invariant violation
        code, payload = run_cli(
            capsys,
            "verify",
            "--scenario",
            str(bundled_scenario_path("two_cell_chain")),
            "--eps",
            "1e-18",
        )
        assert code == 3
        assert payload["ok"] is False
        assert any(not c["passed"] for c in payload["checks"])


class TestValidationFailures:
    def test_unknown_link_exits_one(self, capsys, tmp_path, single_cell_file):
        doc = json.loads(single_cell_file.read_text())
        doc["routing"].append({"from": "ghost", "to": "e1", "fraction": 0.1})
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        code, payload = run_cli(capsys, "verify", "--scenario", str(bad))
        assert code == 1
        assert payload["error"] == "validation"
        assert any("ghost" in v for v in payload["violations"])

    def test_malformed_json_exits_one(self, capsys, tmp_path):
        bad = tmp_path / "broken.json"
        bad.write_text("{not json")
        code, payload = run_cli(capsys, "simulate", "--scenario", str(bad), "--out", str(tmp_path))
        assert code == 1
        assert payload["error"] == "validation"

    def test_nonconvergence_exits_two(self, capsys, monkeypatch, single_cell_file):
        import flownet.cli as cli_module

        def boom(scenario):
            raise NonConvergenceError("stalled", 99, 1.0)

        monkeypatch.setattr(cli_module, "solve", boom)
        code, payload = run_cli(capsys, "verify", "--scenario", str(single_cell_file))
        assert code == 2
        assert payload["error"] == "non-convergence"
        assert payload["iterations"] == 99


class TestSimulate:
    def test_writes_trajectory_and_report(self, capsys, tmp_path, single_cell_file):
        out = tmp_path / "results"
        code, payload = run_cli(
            capsys, "simulate", "--scenario", str(single_cell_file), "--out", str(out)
        )
        assert code == 0
        header, data = read_trajectory_csv(out / "trajectory.csv")
        assert header[0] == "t"
        assert data.shape[1] == 1 + 4
        report = json.loads((out / "report.json").read_text())
        assert report["grid"]["h"] == pytest.approx(0.01)
        assert all(c["passed"] for c in report["invariants"])

    def test_step_override(self, capsys, tmp_path, single_cell_file):
        out = tmp_path / "coarse"
        code, payload = run_cli(
            capsys,
            "simulate",
            "--scenario",
            str(single_cell_file),
            "--out",
            str(out),
            "--step",
            "0.1",
        )
        assert code == 0
        assert payload["h"] == pytest.approx(0.1)
        _, data = read_trajectory_csv(out / "trajectory.csv")
        assert data.shape[0] == 21


class TestCompareOracle:
    def test_single_cell_distance_within_bound(self, capsys):
        code, payload = run_cli(
            capsys,
            "compare-oracle",
            "--scenario",
            str(bundled_scenario_path("single_cell_drain")),
        )
        assert code == 0
        assert payload["sup_distance"] <= 5 * payload["h"]

    def test_refine_controls_oracle_step(self, capsys):
        code, payload = run_cli(
            capsys,
            "compare-oracle",
            "--scenario",
            str(bundled_scenario_path("single_cell_boundary")),
            "--refine",
            "5",
        )
        assert code == 0
        assert payload["h_oracle"] == pytest.approx(payload["h"] / 5)


class TestPlotData:
    def test_emits_volume_and_control_tables(self, capsys, tmp_path):
        out = tmp_path / "plots"
        code, payload = run_cli(
            capsys,
            "plot-data",
            "--scenario",
            str(bundled_scenario_path("two_cell_chain")),
            "--out",
            str(out),
        )
        assert code == 0
        header, volumes = read_trajectory_csv(out / "volumes.csv")
        assert header == ["t", "x_e1", "x_e2"]
        header, controls = read_trajectory_csv(out / "controls.csv")
        assert header == ["t", "zeta_e1", "zeta_e2", "equilibrium_e1", "equilibrium_e2"]
        # the steady-state reference column is constant and equals the
        # arrival rate of the first inflow segment
        assert np.all(controls[:, 3] == controls[0, 3])
        assert controls[0, 3] == pytest.approx(0.3)


class TestEntryPoint:
    def test_console_script_runs(self, single_cell_file):
        import subprocess
        import sys

        proc = subprocess.run(
            [sys.executable, "-m", "flownet.cli", "equilibrium", "--scenario", str(single_cell_file)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["segments"][0]["equilibrium"]["e1"] == pytest.approx(0.3)
