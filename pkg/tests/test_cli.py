import numpy as np
import pytest

from stallsgd import experiments
from stallsgd.cli import main
from stallsgd.data import synthetic_fallback, write_raw
from stallsgd.experiments import ConfigError, ExperimentConfig, RunStatistics, build_config, read_table
from stallsgd.optim import RestartPolicy, read_trajectory_csv

SMALL = ["--d", "5", "--observations", "20000", "--exponents", "1.0,0.6"]


def _comments(path):
    return read_table(path)[0]


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nd = 7\nruns=3\nexponents=0.9,0.8\n")
        config = build_config("montecarlo", experiments.read_config_file(cfg), {"runs": 4})
        assert (config.d, config.runs, config.exponents) == (7, 4, (0.9, 0.8))

    def test_command_defaults(self):
        assert build_config("bounds").d == 100
        assert build_config("stall").runs == 1
        assert build_config("montecarlo").d == 10

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("depth=3\n")
        with pytest.raises(ConfigError, match="depth"):
            experiments.read_config_file(cfg)

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("d 3\n")
        with pytest.raises(ConfigError, match=":1:"):
            experiments.read_config_file(cfg)

    def test_value_parsing(self):
        assert experiments.parse_value("observations", "1e6") == 10**6
        assert experiments.parse_value("synthetic", "yes") is True
        assert experiments.parse_value("bound_observations", "100,1e4") == (100, 10**4)
        with pytest.raises(ConfigError):
            experiments.parse_value("d", "ten")

    @pytest.mark.parametrize("field,value", [("d", 0), ("delta", 0.0), ("exponents", (1.0, -0.5)), ("growth_factor", 1.0)])
    def test_validation(self, field, value):
        with pytest.raises(ConfigError):
            ExperimentConfig(**{field: value}).validate()

    def test_montecarlo_needs_two_runs(self):
        with pytest.raises(ConfigError):
            build_config("montecarlo", {}, {"runs": 1})


class TestRunStatistics:
    def test_values(self):
        s = RunStatistics.from_errors([0.05, 0.2, 0.1, 0.4], 0.15)
        assert (s.min, s.median, s.max) == (0.05, 0.15000000000000002, 0.4)
        assert s.variance == pytest.approx(np.var([0.05, 0.2, 0.1, 0.4], ddof=1))
        assert s.fraction_below_delta == 0.5


class TestStallRestart:
    def test_outputs(self, tmp_path):
        out = tmp_path / "o"
        assert main(["stall", *SMALL, "--out", str(out)]) == 0
        assert main(["restart", *SMALL, "--out", str(out)]) == 0
        comments, header, rows = read_table(out / "stall_errors.csv")
        assert header == ["method", "exponent", "k", "error", "log10_error"]
        assert comments["d"] == "5" and comments["exponents"] == "1.0,0.6"
        # paired streams
        assert comments["stream_checksum"] == _comments(out / "restart_errors.csv")["stream_checksum"]
        _, _, trig = read_table(out / "restart_triggers.csv")
        np.testing.assert_array_equal([int(r[1]) for r in trig], RestartPolicy(100, 1.56).triggers(20000))
        with open(out / "stall_trajectory_p1.csv") as fh:
            ks, thetas = read_trajectory_csv(fh)
        assert ks[0] == 0 and ks[-1] == 20000 and thetas.shape[1] == 5
        np.testing.assert_array_equal(thetas[0], np.zeros(5))

    def test_restart_helps_p1(self, tmp_path):
        config = build_config("stall", {}, {"d": 5, "observations": 50_000, "exponents": (1.0, 0.5), "out": str(tmp_path), "save_trajectories": False})
        stall = experiments.run_stall(config)
        restart = experiments.run_restart(config)
        assert restart["final_error"][1.0] < stall["final_error"][1.0]
        assert restart["final_error"][0.5] < 3 * stall["final_error"][0.5]

    def test_all_exponents_share_stream(self, tmp_path):
        config = build_config("stall", {}, {"d": 4, "observations": 5000, "out": str(tmp_path), "save_trajectories": False})
        res = experiments.run_stall(config)
        assert len(res["result"].checksums) == 1


class TestMonteCarloBounds:
    def test_montecarlo_table(self, tmp_path):
        assert main(["montecarlo", *SMALL, "--runs", "6", "--out", str(tmp_path)]) == 0
        comments, header, rows = read_table(tmp_path / "montecarlo.csv")
        assert header[:4] == ["method", "exponent", "restarted", "n_runs"]
        assert [r[0] for r in rows] == ["ols", "sgd_p1", "sgd_p0.6", "restarted_p1", "restarted_p0.6"]
        for r in rows:
            mean, median, var, mx, mn, frac = map(float, r[4:10])
            assert mn <= median <= mx and 0 <= frac <= 1 and var >= 0
        assert rows[1][10] != "" and rows[3][10] == ""

    def test_bounds_table(self, tmp_path):
        assert main(["bounds", "--d", "10", "--bound-observations", "100,10000", "--exponents", "0.7", "--out", str(tmp_path)]) == 0
        comments, header, rows = read_table(tmp_path / "bounds.csv")
        assert "beta_norm" in comments["assumption"]
        assert len(rows) == 2
        assert all(0.0 <= float(r[2]) <= 1.0 for r in rows)
        assert float(rows[0][3]) <= float(rows[0][2])

    def test_empty_grid(self, tmp_path):
        assert main(["bounds", "--bound-observations", "", "--out", str(tmp_path)]) == 0
        text = (tmp_path / "bounds.csv").read_text().splitlines()
        assert text[-1] == ",".join(experiments.BOUNDS_COLUMNS)


class TestNeutrino:
    def test_missing_dataset(self, tmp_path, capsys):
        assert main(["neutrino", "--out", str(tmp_path)]) == 3
        err = capsys.readouterr().err.strip()
        assert err.startswith("error: kind=DatasetMissingError command=neutrino")
        assert "UCI" in err and "--synthetic" in err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["neutrino", "--dataset", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == 3
        assert "nope.txt" in capsys.readouterr().err

    def test_dataset_file(self, tmp_path):
        path = tmp_path / "mini.txt"
        write_raw(synthetic_fallback(1, 60, 90), path)
        code = main(["neutrino", "--dataset", str(path), "--epochs", "2", "--record-every", "40",
                     "--bfgs-iters", "3", "--out", str(tmp_path / "o")])
        assert code == 0
        comments, header, rows = read_table(tmp_path / "o" / "neutrino_final.csv")
        assert comments["data_source"] == "miniboone"
        assert [r[0] for r in rows] == ["sgd", "restarted_sgd", "adagrad", "restarted_adagrad", "bfgs"]
        n_iters = int(comments["iterations"])
        assert n_iters == 2 * int(comments["n_train"])
        assert all(int(r[6]) == -(-n_iters // 40) for r in rows[:4])

    def test_synthetic_flagged(self, tmp_path):
        config = build_config("neutrino", {}, {"synthetic": True, "epochs": 1, "record_every": 50, "bfgs_iters": 2,
                                               "out": str(tmp_path), "save_trajectories": False})
        res = experiments.run_neutrino(config, raw=synthetic_fallback(0, 40, 60))
        assert res["synthetic"]
        assert _comments(tmp_path / "neutrino_metrics.csv")["data_source"] == "synthetic"

    def test_bad_dataset(self, tmp_path, capsys):
        path = tmp_path / "bad.txt"
        path.write_text("1 1\n1 2 3\n")
        assert main(["neutrino", "--dataset", str(path), "--out", str(tmp_path)]) == 3
        assert "DataFormatError" in capsys.readouterr().err


class TestErrorsAndSelfcheck:
    def test_usage_error(self, capsys):
        assert main(["stall", "--d", "many"]) == 2
        assert capsys.readouterr().err.startswith("error: kind=UsageError command=stall")

    def test_config_error(self, capsys):
        assert main(["stall", "--d", "0"]) == 2
        assert 'message="d must be >= 1"' in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["stall", "--config", str(tmp_path / "none.cfg")]) == 1
        assert "FileNotFoundError" in capsys.readouterr().err

    def test_config_file_used(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("d=3\nobservations=1000\nexponents=0.7\n")
        assert main(["stall", "--config", str(cfg), "--d", "4", "--out", str(tmp_path)]) == 0
        assert _comments(tmp_path / "stall_errors.csv")["d"] == "4"
        assert _comments(tmp_path / "stall_errors.csv")["observations"] == "1000"

    def test_selfcheck_pass_and_deterministic(self, capsys):
        assert main(["selfcheck"]) == 0
        first = capsys.readouterr().out
        assert main(["selfcheck"]) == 0
        assert capsys.readouterr().out == first
        assert first.rstrip().endswith("result: PASS")

    def test_selfcheck_fault(self, capsys, monkeypatch):
        monkeypatch.setenv("STALLSGD_SELFCHECK_FAULT", "gradient")
        assert main(["selfcheck"]) == 1
        out = capsys.readouterr().out
        assert "FAIL gradient_fd" in out and "result: FAIL (gradient_fd)" in out
