"""Artifact serialization: tidy series CSV, run summaries, manifests.

``record.csv`` is one tidy table with columns series, time, cycle,
particle, component, value; every numeric series of a run lands there.
Values are written with 17 significant digits, which round-trips IEEE
doubles exactly, so parse(write(record)) reproduces every number bit for
bit.  Strings and provenance go to ``meta.json`` instead.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from datetime import datetime, timezone

import numpy as np
import yaml

from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentRecord,
    McSummary,
    RunMetrics,
    run_metrics,
)

SCHEMA = ("series", "time", "cycle", "particle", "component", "value")


def _fmt(value) -> str:
    return format(float(value), ".17g")


def _plain(value):
    """Nested tuples to lists, for YAML and JSON emitters."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _package_version() -> str:
    from varnpf import __version__

    return __version__


def _series_rows(record: ExperimentRecord):
    """Yield every numeric series of a record as tidy rows.

    Index conventions: ``time`` is the grid time (for per-step ratios, the
    step start), ``cycle`` the observation interval, ``component`` the
    state or observation component; per-subinterval series use the
    subinterval index as component, and pseudo targets flatten
    (subinterval, component) to subinterval * m + component.
    """
    times = record.times
    for name, arr in (
        ("truth", record.truth),
        ("ensemble_mean", record.ensemble_mean),
    ):
        for t in range(arr.shape[0]):
            for c in range(arr.shape[1]):
                yield (name, _fmt(times[t]), "", "", str(c), _fmt(arr[t, c]))
    for t in range(record.step_states.shape[0]):
        for i in range(record.step_states.shape[1]):
            for c in range(record.step_states.shape[2]):
                yield (
                    "step_state", _fmt(times[t]), "", str(i), str(c),
                    _fmt(record.step_states[t, i, c]),
                )
            yield (
                "step_weight", _fmt(times[t]), "", str(i), "",
                _fmt(record.step_weights[t, i]),
            )
    for k in range(record.obs_times.shape[0]):
        yield ("obs_time", "", str(k), "", "", _fmt(record.obs_times[k]))
        for c in range(record.observations.shape[1]):
            yield (
                "observation", "", str(k), "", str(c),
                _fmt(record.observations[k, c]),
            )
    for name in ("prior_ness", "posterior_ness", "resampled", "collapsed"):
        arr = getattr(record, name)
        for k in range(arr.shape[0]):
            yield (name, "", str(k), "", "", _fmt(arr[k]))
    if record.step_ratio is not None:
        for t in range(record.step_ratio.shape[0]):
            for i in range(record.step_ratio.shape[1]):
                yield (
                    "step_ratio", _fmt(times[t]), "", str(i), "",
                    _fmt(record.step_ratio[t, i]),
                )
        per_sub = (
            ("control_proposed_norm", record.control_proposed_norms),
            ("control_applied_norm", record.control_applied_norms),
            ("rollback", record.rollbacks),
            ("phi_floored", record.phi_floored),
            ("batches_used", record.batches_used),
        )
        for name, arr in per_sub:
            for k in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    for i in range(arr.shape[2]):
                        yield (
                            name, "", str(k), str(i), str(j),
                            _fmt(arr[k, j, i]),
                        )
        for k in range(record.log_rn.shape[0]):
            for i in range(record.log_rn.shape[1]):
                yield (
                    "log_rn", "", str(k), str(i), "",
                    _fmt(record.log_rn[k, i]),
                )
        for k in range(record.realization_steps.shape[0]):
            yield (
                "realization_steps", "", str(k), "", "",
                _fmt(record.realization_steps[k]),
            )
    if record.pseudo_targets is not None:
        n_cycles, m_sub, m_obs = record.pseudo_targets.shape
        for k in range(n_cycles):
            yield (
                "variational_cost", "", str(k), "", "",
                _fmt(record.variational_cost[k]),
            )
            yield (
                "variational_iterations", "", str(k), "", "",
                _fmt(record.variational_iterations[k]),
            )
            for j in range(m_sub):
                for c in range(m_obs):
                    yield (
                        "pseudo_target", "", str(k), "", str(j * m_obs + c),
                        _fmt(record.pseudo_targets[k, j, c]),
                    )


def write_record_csv(record: ExperimentRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCHEMA)
        writer.writerows(_series_rows(record))


def read_record_csv(path) -> dict:
    """Load a tidy record file as {series: {column: array}}.

    Index columns come back as float arrays with nan where the writer left
    the cell empty; values preserve the written doubles exactly.
    """
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != SCHEMA:
            raise ConfigError(f"unexpected record header {header!r}")
        for row in reader:
            bucket = out.setdefault(
                row[0], {name: [] for name in SCHEMA[1:]}
            )
            for name, cell in zip(SCHEMA[1:], row[1:]):
                bucket[name].append(float(cell) if cell != "" else np.nan)
    return {
        name: {col: np.asarray(vals) for col, vals in bucket.items()}
        for name, bucket in out.items()
    }


_SUMMARY_FIELDS = [f.name for f in dataclasses.fields(RunMetrics)]
_SUMMARY_TYPES = {f.name: f.type for f in dataclasses.fields(RunMetrics)}


def write_summary_csv(rows, path) -> None:
    """Per-run metric rows; floats at full precision, bools as 0/1."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SUMMARY_FIELDS)
        for row in rows:
            out = []
            for name in _SUMMARY_FIELDS:
                value = getattr(row, name)
                kind = _SUMMARY_TYPES[name]
                if kind == "float":
                    out.append(_fmt(value))
                elif kind == "bool":
                    out.append("1" if value else "0")
                else:
                    out.append(str(value))
            writer.writerow(out)


def read_summary_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _SUMMARY_FIELDS:
            raise ConfigError(f"unexpected summary header {header!r}")
        for raw in reader:
            kwargs = {}
            for name, cell in zip(header, raw):
                kind = _SUMMARY_TYPES[name]
                if kind == "float":
                    kwargs[name] = float(cell)
                elif kind == "int":
                    kwargs[name] = int(cell)
                elif kind == "bool":
                    kwargs[name] = cell == "1"
                else:
                    kwargs[name] = cell
            rows.append(RunMetrics(**kwargs))
    return rows


def build_run_meta(record: ExperimentRecord) -> dict:
    return {
        "kind": "run",
        "created": datetime.now(timezone.utc).isoformat(),
        "package_version": _package_version(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "config": record.config.to_dict(),
        "runtime": record.runtime,
        "failed": record.failed,
        "failure_message": record.failure_message,
        "truth_digest": record.truth_digest,
        "variational_status": record.variational_status,
        "metrics": dataclasses.asdict(run_metrics(record)),
    }


def build_mc_meta(
    summary: McSummary, config_template: ExperimentConfig
) -> dict:
    return {
        "kind": "mc",
        "created": datetime.now(timezone.utc).isoformat(),
        "package_version": _package_version(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "config_template": config_template.to_dict(),
        "base_seed": summary.base_seed,
        "runs_per_ic": summary.runs_per_ic,
        "filters": list(summary.filters),
        "initial_conditions": _plain(summary.initial_conditions),
        "aggregate": summary.aggregate(),
    }


def write_meta(meta: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config_file(path) -> ExperimentConfig:
    """Parse a YAML experiment config, rejecting unknown keys."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed config file: {err}") from err
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a key/value mapping")
    return ExperimentConfig.from_dict(data)


def write_config_file(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(_plain(config.to_dict()), fh, sort_keys=False)
