"""Artifact round trips: tidy record CSV, summary CSV, meta, YAML configs."""

import dataclasses
import json
import math

import numpy as np
import pytest

from varnpf.harness import (
    ConfigError,
    ExperimentConfig,
    run_experiment,
    run_metrics,
)
from varnpf.io import (
    SCHEMA,
    build_mc_meta,
    build_run_meta,
    load_config_file,
    read_record_csv,
    read_summary_csv,
    write_config_file,
    write_meta,
    write_record_csv,
    write_summary_csv,
)
from varnpf.harness import run_monte_carlo
from varnpf.nudging import NudgingConfig


def small_config(**kwargs):
    kwargs.setdefault("particles", 3)
    kwargs.setdefault("t_final", 0.5)
    return ExperimentConfig(**kwargs)


def series_matrix(data, name, shape):
    return data[name]["value"].reshape(shape)


class TestRecordCsv:
    def test_bootstrap_record_round_trips_bitwise(self, tmp_path):
        record = run_experiment(small_config(seed=60))
        path = tmp_path / "record.csv"
        write_record_csv(record, path)
        data = read_record_csv(path)
        assert np.array_equal(
            series_matrix(data, "truth", (51, 3)), record.truth
        )
        assert np.array_equal(
            series_matrix(data, "ensemble_mean", (51, 3)),
            record.ensemble_mean,
        )
        assert np.array_equal(
            series_matrix(data, "step_weight", (51, 3)),
            record.step_weights,
        )
        assert np.array_equal(
            data["posterior_ness"]["value"], record.posterior_ness
        )
        assert np.array_equal(
            data["observation"]["value"].reshape(1, 3),
            record.observations,
        )
        assert "step_ratio" not in data
        assert "pseudo_target" not in data

    def test_guided_record_round_trips_bitwise(self, tmp_path):
        record = run_experiment(
            small_config(filter_name="var_npf", seed=61)
        )
        path = tmp_path / "record.csv"
        write_record_csv(record, path)
        data = read_record_csv(path)
        got_ratio = series_matrix(data, "step_ratio", (50, 3))
        same = np.isfinite(record.step_ratio)
        assert np.array_equal(got_ratio[same], record.step_ratio[same])
        assert np.all(np.isnan(got_ratio[~same]))
        applied = data["control_applied_norm"]["value"].reshape(1, 5, 3)
        assert np.array_equal(applied, record.control_applied_norms)
        assert np.array_equal(
            data["log_rn"]["value"].reshape(1, 3), record.log_rn
        )
        assert np.array_equal(
            data["pseudo_target"]["value"].reshape(1, 5, 3),
            record.pseudo_targets,
        )
        assert np.array_equal(
            data["realization_steps"]["value"],
            record.realization_steps.astype(float),
        )

    def test_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError):
            read_record_csv(path)
        assert SCHEMA[0] == "series"


def rows_equal(a, b):
    for field in dataclasses.fields(a):
        x, y = getattr(a, field.name), getattr(b, field.name)
        if isinstance(x, float) and math.isnan(x):
            if not (isinstance(y, float) and math.isnan(y)):
                return False
        elif x != y:
            return False
    return True


class TestSummaryCsv:
    def test_rows_round_trip(self, tmp_path):
        summary = run_monte_carlo(
            small_config(seed=62), runs_per_ic=2, filters=("pf", "npf")
        )
        path = tmp_path / "summary.csv"
        write_summary_csv(summary.runs, path)
        back = read_summary_csv(path)
        assert len(back) == len(summary.runs)
        for a, b in zip(summary.runs, back):
            assert rows_equal(a, b)

    def test_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(ConfigError):
            read_summary_csv(path)


class TestMeta:
    def test_run_meta_echoes_config(self, tmp_path):
        cfg = small_config(filter_name="npf", seed=63)
        record = run_experiment(cfg)
        meta = build_run_meta(record)
        path = tmp_path / "meta.json"
        write_meta(meta, path)
        loaded = json.loads(path.read_text())
        assert loaded["kind"] == "run"
        assert loaded["truth_digest"] == record.truth_digest
        assert not loaded["failed"]
        assert ExperimentConfig.from_dict(loaded["config"]) == cfg
        assert loaded["metrics"]["rmse"] == run_metrics(record).rmse

    def test_mc_meta_carries_aggregate(self, tmp_path):
        cfg = small_config(seed=64)
        summary = run_monte_carlo(cfg, runs_per_ic=1, filters=("pf",))
        meta = build_mc_meta(summary, cfg)
        path = tmp_path / "meta.json"
        write_meta(meta, path)
        loaded = json.loads(path.read_text())
        assert loaded["kind"] == "mc"
        assert loaded["runs_per_ic"] == 1
        assert loaded["filters"] == ["pf"]
        assert len(loaded["aggregate"]) == 1
        assert loaded["aggregate"][0]["runs"] == 1


class TestConfigFiles:
    def test_yaml_round_trip(self, tmp_path):
        cfg = ExperimentConfig(
            filter_name="var_npf",
            seed=65,
            nudging=NudgingConfig(subintervals=10, tolerance=0.05),
        )
        path = tmp_path / "config.yaml"
        write_config_file(cfg, path)
        assert load_config_file(path) == cfg

    def test_empty_file_means_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config_file(path) == ExperimentConfig()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("bogus_key: 1\n")
        with pytest.raises(ConfigError, match="bogus_key"):
            load_config_file(path)

    def test_malformed_yaml_rejected(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("seed: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config_file(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(tmp_path / "nope.yaml")

    def test_non_mapping_rejected(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config_file(path)
