"""Command-line behaviour, exercised in-process through cli.main."""

import csv
import json
import re
import shutil
import subprocess

import numpy as np
import pytest

from quantbsde import load_tree
from quantbsde.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def stdout_dict(out):
    pairs = [line.split("=", 1) for line in out.strip().splitlines() if "=" in line]
    return {k: v for k, v in pairs}


class TestSolve:
    def test_default_call_model(self, capsys):
        code, out, err = run_cli(capsys, "solve", "--steps", "20", "--quantizers", "50")
        assert code == 0
        kv = stdout_dict(out)
        assert kv["u0"] == "11.8058"
        assert re.fullmatch(r"-?\d+\.\d{4}", kv["v0"])
        assert err == ""

    def test_output_artifact_holds_tree_and_solution(self, capsys, tmp_path):
        out_path = tmp_path / "run.rmq.json"
        code, out, _ = run_cli(
            capsys,
            "solve",
            "--steps",
            "6",
            "--quantizers",
            "10",
            "--output",
            str(out_path),
        )
        assert code == 0
        assert stdout_dict(out)["output"] == str(out_path)
        tree, solution = load_tree(out_path)
        assert tree.time_grid.n == 6
        assert len(tree.layers) == 7
        assert solution is not None
        assert f"{solution['u0']:.4f}" == stdout_dict(out)["u0"]
        assert len(solution["values"]) == 7
        assert len(solution["controls"]) == 6
        assert len(solution["values"][3]) == 10

    def test_driverless_model_reduces_to_terminal_expectation(self, capsys, tmp_path):
        out_path = tmp_path / "gbm.rmq.json"
        code, out, _ = run_cli(
            capsys,
            "solve",
            "--model",
            "gbm",
            "--steps",
            "10",
            "--quantizers",
            "15",
            "--output",
            str(out_path),
        )
        assert code == 0
        tree, solution = load_tree(out_path)
        last = tree.layers[-1]
        payoff = np.maximum(last.codewords - 100.0, 0.0)
        assert solution["u0"] == pytest.approx(
            float(last.weights @ payoff), abs=1e-10
        )

    def test_nonlinear_model_runs(self, capsys):
        code, out, _ = run_cli(
            capsys, "solve", "--model", "bergman", "--steps", "10", "--quantizers", "10"
        )
        assert code == 0
        assert re.fullmatch(r"-?\d+\.\d{4}", stdout_dict(out)["u0"])

    def test_config_file_drives_the_run(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"model": "gbm", "steps": 4, "quantizers": 5}))
        code, out, _ = run_cli(capsys, "solve", "--config", str(cfg))
        assert code == 0
        assert "u0=" in out

    def test_flag_overrides_config_output(self, capsys, tmp_path):
        cfg_out = tmp_path / "from_config.json"
        flag_out = tmp_path / "from_flag.json"
        cfg = tmp_path / "run.json"
        cfg.write_text(
            json.dumps(
                {"model": "gbm", "steps": 3, "quantizers": 4, "output": str(cfg_out)}
            )
        )
        code, _, _ = run_cli(
            capsys, "solve", "--config", str(cfg), "--output", str(flag_out)
        )
        assert code == 0
        assert flag_out.exists()
        assert not cfg_out.exists()


class TestSweep:
    def test_small_grid_writes_csv_and_sidecar(self, capsys, tmp_path):
        out_path = tmp_path / "sweep.csv"
        code, out, err = run_cli(
            capsys,
            "sweep",
            "--model",
            "gbm",
            "--quantizers",
            "5,8",
            "--steps",
            "4,6",
            "--output",
            str(out_path),
        )
        assert code == 0
        kv = stdout_dict(out)
        assert kv["cells"] == "4"
        assert kv["failures"] == "0"
        assert kv["output"] == str(out_path)
        assert err == ""
        with open(out_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["N", "4", "6"]
        assert len(rows) == 3
        sidecar = json.loads((tmp_path / "sweep.csv.json").read_text())
        assert sidecar["model"] == "gbm"
        assert sidecar["step_counts"] == [4, 6]

    def test_missing_lists_is_a_config_error(self, capsys):
        code, _, err = run_cli(capsys, "sweep")
        assert code == 2
        assert err.startswith("error:")

    def test_malformed_count_list(self, capsys):
        code, _, err = run_cli(
            capsys, "sweep", "--quantizers", "a,b", "--steps", "5"
        )
        assert code == 2
        assert "not integers" in err


class TestHedge:
    def test_table_covers_requested_layers(self, capsys, tmp_path):
        out_path = tmp_path / "hedge.csv"
        code, out, _ = run_cli(
            capsys,
            "hedge",
            "--steps",
            "10",
            "--quantizers",
            "8",
            "--hedge-steps",
            "2,5",
            "--output",
            str(out_path),
        )
        assert code == 0
        assert stdout_dict(out)["rows"] == "16"
        with open(out_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 17
        assert rows[0] == ["step", "codeword", "v_hat", "v_exact", "abs_err"]
        assert {r[0] for r in rows[1:]} == {"2", "5"}

    def test_step_at_or_past_the_horizon_is_rejected(self, capsys):
        code, _, err = run_cli(
            capsys,
            "hedge",
            "--steps",
            "10",
            "--quantizers",
            "5",
            "--hedge-steps",
            "10",
        )
        assert code == 2
        assert "out of range" in err

    def test_models_without_closed_form_are_rejected(self, capsys):
        code, _, err = run_cli(
            capsys,
            "hedge",
            "--model",
            "bergman",
            "--steps",
            "5",
            "--quantizers",
            "5",
            "--hedge-steps",
            "1",
        )
        assert code == 2
        assert "black-scholes" in err


class TestValidation:
    def test_unknown_model(self, capsys):
        code, _, err = run_cli(capsys, "solve", "--model", "heston")
        assert code == 2
        assert err.startswith("error:")
        assert "heston" in err

    def test_invalid_json_config(self, capsys, tmp_path):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{nope")
        code, _, err = run_cli(capsys, "solve", "--config", str(cfg))
        assert code == 2
        assert "invalid JSON" in err

    def test_non_object_config(self, capsys, tmp_path):
        cfg = tmp_path / "list.json"
        cfg.write_text("[1, 2]")
        code, _, err = run_cli(capsys, "solve", "--config", str(cfg))
        assert code == 2
        assert "JSON object" in err

    def test_missing_config_file(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "solve", "--config", str(tmp_path / "absent.json")
        )
        assert code == 2
        assert "cannot read" in err

    def test_nonpositive_step_count(self, capsys):
        code, _, err = run_cli(capsys, "solve", "--steps", "0")
        assert code == 2
        assert "at least 1" in err

    def test_bad_model_parameters(self, capsys, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"params": {"sigma": -0.2}}))
        code, _, err = run_cli(capsys, "solve", "--config", str(cfg))
        assert code == 2
        assert "params" in err


class TestConsoleScript:
    def test_installed_entry_point(self, tmp_path):
        exe = shutil.which("quantbsde")
        assert exe, "console script not installed"
        proc = subprocess.run(
            [exe, "solve", "--model", "gbm", "--steps", "3", "--quantizers", "4"],
            capture_output=True,
            text=True,
            cwd=tmp_path,
        )
        assert proc.returncode == 0
        assert "u0=" in proc.stdout
