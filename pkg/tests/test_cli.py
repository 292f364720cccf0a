import json
import subprocess
import sys

import numpy as np
import pytest

import hazscreen as hz
from hazscreen.cli import main


@pytest.fixture
def toy_csv(tmp_path, rng):
    n, p = 20, 10
    Z = rng.standard_normal((n, p))
    rate = 1.0 + 0.3 * np.tanh(Z[:, 0])
    T = rng.standard_exponential(n) / rate
    C = rng.standard_exponential(n) / 0.4
    path = tmp_path / "toy.csv"
    hz.save_dataset(path, np.minimum(T, C), T <= C, Z)
    return path


class TestSisCommand:
    def test_ranked_csv(self, toy_csv, tmp_path):
        out = tmp_path / "ranked.csv"
        rc = main(["sis", "--input", str(toy_csv), "--variant", "vanilla",
                   "--top-k", "5", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "rank,feature,score"
        assert len(lines) == 6
        run = json.loads((tmp_path / "ranked.csv.run.json").read_text())
        assert run["config"]["command"] == "sis"
        assert "seed" in run["config"]
        assert len(run["kept"]) == 5

    def test_missing_input_exit_2(self, tmp_path):
        rc = main(["sis", "--input", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "o.csv")])
        assert rc == 2

    def test_unknown_flag_exit_2(self, toy_csv):
        with pytest.raises(SystemExit) as exc:
            main(["sis", "--input", str(toy_csv), "--bogus"])
        assert exc.value.code == 2


class TestFitCommand:
    def test_json_fields(self, toy_csv, tmp_path):
        out = tmp_path / "fit.json"
        rc = main(["fit", "--input", str(toy_csv), "--subset", "1,2,3",
                   "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["names"] == ["f1", "f2", "f3"]
        assert len(payload["beta"]) == 3
        assert len(payload["se"]) == 3 and len(payload["z"]) == 3
        assert "loss" in payload

    def test_subset_by_name(self, toy_csv, tmp_path):
        out = tmp_path / "fit.json"
        assert main(["fit", "--input", str(toy_csv), "--subset", "f2,f4",
                     "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["subset"] == [1, 3]

    def test_singular_subset_exit_3(self, tmp_path, rng):
        n = 20
        z = rng.standard_normal(n)
        Z = np.column_stack([z, z, rng.standard_normal(n)])
        T = rng.standard_exponential(n)
        path = tmp_path / "dup.csv"
        hz.save_dataset(path, T, np.ones(n), Z)
        rc = main(["fit", "--input", str(path), "--subset", "1,2",
                   "--out", str(tmp_path / "f.json")])
        assert rc == 3

    def test_penalized_fit_report(self, toy_csv, tmp_path):
        out = tmp_path / "fit.json"
        rc = main(["fit", "--input", str(toy_csv), "--subset", "1,2,3,4",
                   "--penalty", "os_scad", "--tuner", "pbic",
                   "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert "penalized" in payload and "pbic_path" in payload
        assert payload["penalized"]["converged"] is True


class TestIsisCommand:
    def test_trace_artifact(self, toy_csv, tmp_path):
        out = tmp_path / "trace.json"
        rc = main(["isis", "--input", str(toy_csv), "--variant", "ly",
                   "--d", "4", "--rmax", "2", "--tuner", "pbic",
                   "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["reason"] in ("stabilized", "max_iter")
        assert payload["config"]["d"] == 4
        assert isinstance(payload["final"], list)


class TestSimulateCommand:
    def test_table3_schema(self, tmp_path):
        out = tmp_path / "report.json"
        rc = main(["simulate", "--protocol", "table3", "--case", "c",
                   "--links", "log", "--variants", "ly_coef",
                   "--reps", "10", "--threads", "1", "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        cell = payload["cells"][0]
        assert cell["case"] == "c" and cell["link"] == "log"
        assert "avg_true_positives" in cell["metrics"]["ly_coef"]
        assert "sis_mmms" in cell

    def test_rerun_reproduces_artifact(self, tmp_path):
        args = ["simulate", "--protocol", "table1", "--p", "80",
                "--reps", "2", "--links", "cox", "--rhos", "0.25",
                "--s", "3", "--seed", "5", "--threads", "1"]
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_config_echoed(self, tmp_path):
        out = tmp_path / "report.json"
        main(["simulate", "--protocol", "table1", "--p", "60", "--reps", "1",
              "--links", "logit", "--rhos", "0", "--s", "3", "--seed", "9",
              "--threads", "1", "--out", str(out)])
        payload = json.loads(out.read_text())
        assert payload["config"]["seed"] == 9
        assert payload["config"]["p"] == 60


def test_bench_command(capsys):
    assert main(["bench", "--n", "80", "--p", "300", "--reps", "1"]) == 0
    assert "compute_fast" in capsys.readouterr().out


def test_module_invocation():
    proc = subprocess.run([sys.executable, "-m", "hazscreen", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
