"""
Tests for main.py and the commands package
"""

import json

import pytest

from main import main
from services.experiments import TRIAL_CSV_HEADER


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture
def simulated(tmp_path, system_file):
    """Measurements of the decoupled system with source 0 active."""
    output = tmp_path / "y.csv"
    code = main([
        "simulate", "--system", str(system_file), "--horizon", "6", "--active-set", "0",
        "--sigma", "1e-6", "--seed", "3", "-o", str(output),
    ])
    assert code == 0
    return output


class TestAnalyzeCommand:
    """Tests for the analyze command."""

    def test_example_system(self, tmp_path, example1_file):
        output = tmp_path / "analyze.json"
        code = main(["analyze", "--system", str(example1_file), "--active-set", "0", "-o", str(output)])
        report = read_json(output)

        assert code == 0
        assert report["eta_s"]["value"] == 1
        assert report["has_invariant_zeros"] is True

    def test_stdout_json(self, capsys, system_file):
        code = main(["analyze", "--system", str(system_file), "--active-set", "0,1", "--horizon", "4"])
        report = json.loads(capsys.readouterr().out)

        assert code == 0
        assert report["active_set"] == [0, 1]
        assert report["prop1"]["rank_ok"] is True

    def test_missing_c_names_field(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text(json.dumps({"A": [[0.5]], "B": [[1.0]]}))

        code = main(["analyze", "--system", str(path), "--active-set", "0"])

        assert code == 2
        assert "field 'C'" in capsys.readouterr().err

    def test_requires_active_set(self, system_file):
        assert main(["analyze", "--system", str(system_file)]) == 2

    def test_active_set_out_of_range(self, system_file):
        assert main(["analyze", "--system", str(system_file), "--active-set", "5"]) == 2

    def test_csv_report(self, tmp_path, system_file):
        output = tmp_path / "analyze.csv"
        code = main([
            "analyze", "--system", str(system_file), "--active-set", "0",
            "--format", "csv", "-o", str(output),
        ])
        lines = output.read_text().splitlines()

        assert code == 0
        assert lines[0] == "key,value"
        assert "eta_s.value,1" in lines

    def test_csv_needs_output(self, system_file):
        with pytest.raises(SystemExit) as exc:
            main(["analyze", "--system", str(system_file), "--active-set", "0", "--format", "csv"])
        assert exc.value.code == 2


class TestMicCommand:
    """Tests for the mic command."""

    def test_report_and_trace(self, tmp_path, system_file):
        output = tmp_path / "mic.json"
        trace = tmp_path / "gains.csv"
        code = main([
            "mic", "--system", str(system_file), "--active-set", "0", "--horizon", "3",
            "--sigma", "0.1", "--exclude-x0", "--grid-points", "16", "--trace", str(trace),
            "-o", str(output),
        ])
        report = read_json(output)

        assert code == 0
        assert report["include_initial_state"] is False
        assert report["a3_satisfied"] is True
        assert report["lambda_t"] > 0
        assert trace.read_text().splitlines()[0] == "omega,j,gain"

    def test_requires_horizon(self, system_file):
        assert main(["mic", "--system", str(system_file), "--active-set", "0"]) == 2


class TestSimulateCommand:
    """Tests for the simulate command."""

    def test_writes_measurements_and_truth(self, simulated):
        lines = simulated.read_text().splitlines()
        truth = read_json(simulated.with_name("y.truth.json"))

        assert lines[0] == "k,y1,y2,y3"
        assert len(lines) == 8
        assert truth["support"] == [0]
        assert truth["seed"] == 3

    def test_same_seed_same_file(self, tmp_path, system_file, simulated):
        again = tmp_path / "again.csv"
        main([
            "simulate", "--system", str(system_file), "--horizon", "6", "--active-set", "0",
            "--sigma", "1e-6", "--seed", "3", "-o", str(again), "--no-truth",
        ])

        assert again.read_bytes() == simulated.read_bytes()
        assert not (tmp_path / "again.truth.json").exists()

    def test_requires_output(self, system_file):
        assert main(["simulate", "--system", str(system_file), "--horizon", "3"]) == 2


class TestEstimateCommand:
    """Tests for the estimate command."""

    def test_round_trip_recovers_support(self, tmp_path, system_file, simulated):
        output = tmp_path / "estimate.json"
        code = main([
            "estimate", "--system", str(system_file), "--measurements", str(simulated),
            "--lambda", "0.005", "-o", str(output),
        ])
        report = read_json(output)

        assert code == 0
        assert report["estimate"]["support"] == [0]
        assert report["delay"] == 1
        assert report["lambda_rule"]["rule"] == "given"

    def test_theory_lambda(self, tmp_path, system_file, simulated):
        output = tmp_path / "estimate.json"
        code = main([
            "estimate", "--system", str(system_file), "--measurements", str(simulated),
            "--sigma", "1e-6", "--active-set", "0", "-o", str(output),
        ])
        rule = read_json(output)["lambda_rule"]

        assert code == 0
        assert rule["rule"] == "theory"
        assert rule["m_star"] == 1
        assert rule["alpha"] < 1

    def test_theory_lambda_needs_noise_level(self, system_file, simulated):
        code = main(["estimate", "--system", str(system_file), "--measurements", str(simulated)])
        assert code == 2

    def test_waveform_csv(self, tmp_path, system_file, simulated):
        output = tmp_path / "u.csv"
        code = main([
            "estimate", "--system", str(system_file), "--measurements", str(simulated),
            "--lambda", "0.005", "--format", "csv", "-o", str(output),
        ])
        lines = output.read_text().splitlines()

        assert code == 0
        assert lines[0] == "k,lasso_u0,ols_u0"
        assert len(lines) == 1 + 7

    def test_wrong_measurement_width(self, tmp_path, capsys, system_file):
        path = tmp_path / "narrow.csv"
        path.write_text("k,y1,y2\n0,1.0,2.0\n1,1.5,2.5\n")

        code = main(["estimate", "--system", str(system_file), "--measurements", str(path), "--lambda", "0.1"])

        assert code == 2
        assert "p=3" in capsys.readouterr().err

    def test_horizon_mismatch(self, system_file, simulated):
        code = main([
            "estimate", "--system", str(system_file), "--measurements", str(simulated),
            "--lambda", "0.1", "--horizon", "3",
        ])
        assert code == 2

    def test_iteration_limit_exit_code(self, tmp_path, system_file, simulated):
        code = main([
            "estimate", "--system", str(system_file), "--measurements", str(simulated),
            "--lambda", "0.005", "--max-iter", "1", "-o", str(tmp_path / "e.json"),
        ])
        assert code == 4


class TestSweepCommand:
    """Tests for the sweep command."""

    def sweep_args(self, system_file, output, *extra):
        return [
            "sweep", "--system", str(system_file), "--horizon", "4", "--trials", "3",
            "--lambda-grid", "auto(3)", "--seed", "1", "--workers", "2", "-o", str(output), *extra,
        ]

    def test_byte_identical_reruns(self, tmp_path, system_file):
        first, second = tmp_path / "a.json", tmp_path / "b.json"

        assert main(self.sweep_args(system_file, first)) == 0
        assert main(self.sweep_args(system_file, second)) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_trial_csv(self, tmp_path, system_file):
        output = tmp_path / "trials.csv"
        code = main(self.sweep_args(system_file, output, "--format", "csv"))
        lines = output.read_text().splitlines()

        assert code == 0
        assert lines[0] == ",".join(TRIAL_CSV_HEADER)
        assert len(lines) == 1 + 3 * 3

    def test_config_file_fills_unset_flags(self, tmp_path, system_file):
        config = tmp_path / "campaign.json"
        config.write_text(json.dumps({
            "system": str(system_file), "horizon": 3, "trials": 2, "seed": 5, "lambda-grid": "0.1,0.2",
        }))
        output = tmp_path / "sweep.json"

        code = main(["sweep", "--config", str(config), "--seed", "6", "-o", str(output)])
        spec = read_json(output)["spec"]

        assert code == 0
        assert spec["seed"] == 6
        assert spec["trials"] == 2
        assert spec["n_horizon"] == 3
        assert spec["lambda_grid"] == [0.1, 0.2]
        assert spec["system_source"] == "from_file"

    def test_missing_config_file(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "nope.json")]) == 2

    def test_invalid_grid(self, tmp_path, system_file):
        assert main(self.sweep_args(system_file, tmp_path / "x.json", "--lambda-grid", "auto(0)")) == 2

    def test_study_needs_horizons(self, tmp_path, system_file):
        assert main(self.sweep_args(system_file, tmp_path / "x.json", "--study", "horizon")) == 2

    def test_horizon_study(self, tmp_path, system_file):
        output = tmp_path / "horizon.json"
        code = main(self.sweep_args(system_file, output, "--study", "horizon", "--horizons", "3,5"))
        report = read_json(output)

        assert code == 0
        assert report["study"] == "horizon"
        assert [row["horizon"] for row in report["rows"]] == [3, 5]
