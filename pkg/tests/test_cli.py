"""Configuration and command-line runner tests."""

import json

import pytest

from cilqr_drive.cli import main
from cilqr_drive.config import ConfigError, load_run_config

SMOKE = """\
scenario.track = straight
scenario.duration_s = 2.0
scenario.cruise_speed_kph = 76.0
scenario.seed = 3
"""

FOLLOWING = """\
scenario.track = straight
scenario.duration_s = 3.0
scenario.cruise_speed_kph = 76.0
scenario.longitudinal = true
scenario.lead = true
scenario.lead_gap_m = 30.0
scenario.lead_speed_kph = 70.0
scenario.seed = 3
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadRunConfig:

    def test_defaults_match_published_values(self, tmp_path):
        cfg = load_run_config(_write(tmp_path, SMOKE))
        assert cfg.vehicle.m == 1150.0
        assert cfg.vehicle.c_alpha_f == 80000.0
        assert cfg.lateral.q_diag == (20.0, 1.0, 20.0, 1.0)
        assert cfg.lateral.dt == 0.05
        assert cfg.long_tuning.d_ref == 11.0
        assert cfg.long_tuning.dt == 0.1
        assert cfg.vpc.lookahead_L == 10.0
        assert cfg.vpc.k_vpc == 2.64
        assert cfg.spec.rates.planner_us == 6660
        assert cfg.spec.cruise_speed == pytest.approx(76.0 / 3.6)

    def test_unknown_key_is_line_precise(self, tmp_path):
        path = _write(tmp_path, SMOKE + "vehicle.masss = 1\n")
        with pytest.raises(ConfigError) as err:
            load_run_config(path)
        assert "vehicle.masss" in str(err.value)
        assert ":5:" in str(err.value)

    def test_duplicate_key_rejected(self, tmp_path):
        path = _write(tmp_path, SMOKE + "scenario.seed = 4\n")
        with pytest.raises(ConfigError, match="duplicate"):
            load_run_config(path)

    def test_type_mismatch_rejected(self, tmp_path):
        path = _write(tmp_path, SMOKE + "lateral.horizon = 3.5\n")
        with pytest.raises(ConfigError, match="integer"):
            load_run_config(path)

    def test_duration_and_laps_both_given_rejected(self, tmp_path):
        path = _write(tmp_path, SMOKE + "scenario.laps = 1.0\n")
        with pytest.raises(ConfigError, match="duration"):
            load_run_config(path)

    def test_lead_keys_without_lead_rejected(self, tmp_path):
        path = _write(tmp_path, SMOKE + "scenario.lead_gap_m = 30\n")
        with pytest.raises(ConfigError, match="scenario.lead"):
            load_run_config(path)

    def test_metrics_window_needs_both_ends(self, tmp_path):
        path = _write(tmp_path, SMOKE + "scenario.metrics_t_start = 1\n")
        with pytest.raises(ConfigError, match="metrics_t_end"):
            load_run_config(path)

    def test_set_override_wins_over_file(self, tmp_path):
        path = _write(tmp_path, SMOKE)
        cfg = load_run_config(path, overrides=("scenario.seed=9",
                                               "vehicle.mass=1200"))
        assert cfg.spec.seed == 9
        assert cfg.vehicle.m == 1200.0

    def test_seed_flag_wins_over_set(self, tmp_path):
        path = _write(tmp_path, SMOKE)
        cfg = load_run_config(path, overrides=("scenario.seed=9",), seed=11)
        assert cfg.spec.seed == 11

    def test_missing_file_reported(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.cfg")


class TestRunCommand:

    def test_smoke_run_writes_artifacts(self, tmp_path):
        cfg = _write(tmp_path, SMOKE)
        out = tmp_path / "out"
        rc = main(["run", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        csv_path = out / "run.csv"
        assert csv_path.is_file()
        assert len(csv_path.read_text().splitlines()) > 100
        metrics = json.loads((out / "run_metrics.json").read_text())
        assert "delta_max_abs_m" in metrics
        assert "delta_mae_m" in metrics
        assert (out / "plot_run.py").is_file()

    def test_negative_mass_names_the_key(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMOKE + "vehicle.mass = -1\n")
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "vehicle.mass" in err
        assert "positive" in err

    def test_unknown_key_exits_one(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMOKE + "sim.sigma_tehta = 0.01\n")
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path)])
        assert rc == 1
        assert "sim.sigma_tehta" in capsys.readouterr().err

    def test_bad_set_override_exits_one(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMOKE)
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path),
                   "--set", "scenario.seed=abc"])
        assert rc == 1
        assert "scenario.seed" in capsys.readouterr().err

    def test_equal_seeds_give_identical_csv(self, tmp_path):
        cfg = _write(tmp_path, FOLLOWING)
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            rc = main(["run", "--config", str(cfg), "--out", str(out)])
            assert rc == 0
            outs.append((out / "run.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_off_track_start_exits_two(self, tmp_path, capsys):
        text = SMOKE + "scenario.start_delta = 9.8\nscenario.start_theta = 0.9\n"
        cfg = _write(tmp_path, text)
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path)])
        assert rc == 2
        assert "off_track" in capsys.readouterr().err


class TestCompareCommand:

    def test_identical_controllers_ratio_one(self, tmp_path):
        cfg_a = _write(tmp_path, SMOKE, "a.cfg")
        cfg_b = _write(tmp_path, SMOKE, "b.cfg")
        out = tmp_path / "out"
        rc = main(["compare", str(cfg_a), str(cfg_b), "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "compare.json").read_text())
        assert report["max_offset_ratio"] == 1.0

    def test_seed_mismatch_rejected(self, tmp_path, capsys):
        cfg_a = _write(tmp_path, SMOKE, "a.cfg")
        cfg_b = _write(tmp_path, SMOKE.replace("seed = 3", "seed = 4"),
                       "b.cfg")
        rc = main(["compare", str(cfg_a), str(cfg_b),
                   "--out", str(tmp_path)])
        assert rc == 1
        assert "seed" in capsys.readouterr().err

    def test_non_controller_difference_rejected(self, tmp_path, capsys):
        cfg_a = _write(tmp_path, SMOKE, "a.cfg")
        cfg_b = _write(tmp_path, SMOKE + "vehicle.mass = 1200\n", "b.cfg")
        rc = main(["compare", str(cfg_a), str(cfg_b),
                   "--out", str(tmp_path)])
        assert rc == 1
        assert "controller" in capsys.readouterr().err

    def test_controller_pair_reports_ratio(self, tmp_path):
        cfg_a = _write(tmp_path, SMOKE, "a.cfg")
        cfg_b = _write(tmp_path,
                       SMOKE + "scenario.controller = vpc-cilqr\n", "b.cfg")
        out = tmp_path / "out"
        rc = main(["compare", str(cfg_a), str(cfg_b), "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "compare.json").read_text())
        assert report["controllers"] == ["cilqr", "vpc-cilqr"]
        assert report["reference_ratio"] == 1.36


class TestBenchmarkCommand:

    def test_benchmark_reports_solver_timing(self, tmp_path):
        cfg = _write(tmp_path, FOLLOWING)
        out = tmp_path / "out"
        rc = main(["benchmark", "--config", str(cfg), "--out", str(out),
                   "--states", "20"])
        assert rc == 0
        reports = json.loads((out / "benchmark.json").read_text())
        names = {r["planner"] for r in reports}
        assert names == {"lateral", "longitudinal"}
        for rep in reports:
            assert rep["mean_ms"] > 0.0
            assert rep["n_solves"] > 0
