"""Command line flows and exit codes, driven in-process through main()."""

import json

from varnpf.cli import main
from varnpf.harness import ExperimentConfig
from varnpf.io import load_config_file, write_config_file


def write_config(tmp_path, **kwargs):
    kwargs.setdefault("particles", 3)
    kwargs.setdefault("t_final", 0.5)
    path = tmp_path / "config.yaml"
    write_config_file(ExperimentConfig(**kwargs), path)
    return path


class TestRunCommand:
    def test_run_writes_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path, seed=70)
        out = tmp_path / "out"
        code = main(["run", "--config", str(cfg), "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        assert (out / "record.csv").exists()
        assert (out / "meta.json").exists()
        assert "rmse=" in captured.out
        meta = json.loads((out / "meta.json").read_text())
        assert meta["kind"] == "run"

    def test_filter_and_seed_overrides(self, tmp_path):
        cfg = write_config(tmp_path, seed=70)
        out = tmp_path / "out"
        code = main([
            "run", "--config", str(cfg), "--filter", "var-npf",
            "--seed", "99", "--out", str(out),
        ])
        assert code == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["config"]["filter_name"] == "var_npf"
        assert meta["config"]["seed"] == 99

    def test_run_without_out_prints_only(self, tmp_path, capsys):
        cfg = write_config(tmp_path, seed=71)
        code = main(["run", "--config", str(cfg)])
        captured = capsys.readouterr()
        assert code == 0
        assert "wrote" not in captured.out

    def test_failed_run_exits_two(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, seed=72, ensemble_mean=(1e8, 1e8, 1e8)
        )
        out = tmp_path / "out"
        code = main(["run", "--config", str(cfg), "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 2
        assert "run failed" in captured.err
        # artifacts still land for post-mortem reading
        assert (out / "record.csv").exists()


class TestMcCommand:
    def test_sweep_and_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path, seed=73)
        out = tmp_path / "sweep"
        code = main([
            "mc", "--config", str(cfg), "--runs", "1", "--ics", "0,1",
            "--filters", "pf", "--out", str(out),
        ])
        captured = capsys.readouterr()
        assert code == 0
        assert (out / "summary.csv").exists()
        assert (out / "meta.json").exists()
        assert "pooled over initial conditions:" in captured.out

        code = main(["report", "--in", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        assert "pooled over initial conditions:" in captured.out

    def test_all_failed_exits_two(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, seed=74, ensemble_mean=(1e8, 1e8, 1e8)
        )
        out = tmp_path / "sweep"
        code = main([
            "mc", "--config", str(cfg), "--runs", "1", "--filters", "pf",
            "--out", str(out),
        ])
        captured = capsys.readouterr()
        assert code == 2
        assert "every run failed" in captured.err

    def test_bad_ics_value_exits_one(self, tmp_path, capsys):
        cfg = write_config(tmp_path, seed=75)
        code = main([
            "mc", "--config", str(cfg), "--runs", "1", "--ics", "99",
            "--out", str(tmp_path / "x"),
        ])
        captured = capsys.readouterr()
        assert code == 1
        assert "config error" in captured.err


class TestErrorPaths:
    def test_unknown_config_key_exits_one(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("bogus_key: 1\n")
        code = main(["run", "--config", str(path)])
        captured = capsys.readouterr()
        assert code == 1
        assert "bogus_key" in captured.err

    def test_usage_error_exits_one(self, capsys):
        assert main(["run"]) == 1
        capsys.readouterr()

    def test_unknown_command_exits_one(self, capsys):
        assert main(["frobnicate"]) == 1
        capsys.readouterr()

    def test_report_without_summary_exits_one(self, tmp_path, capsys):
        code = main(["report", "--in", str(tmp_path)])
        captured = capsys.readouterr()
        assert code == 1
        assert "config error" in captured.err

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        capsys.readouterr()


class TestConfigFidelity:
    def test_cli_round_trip_preserves_config(self, tmp_path):
        cfg_path = write_config(
            tmp_path, seed=76, filter_name="npf", particles=5
        )
        loaded = load_config_file(cfg_path)
        assert loaded.filter_name == "npf"
        assert loaded.particles == 5
        assert loaded.seed == 76
