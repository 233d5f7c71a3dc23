import json
from pathlib import Path

import numpy as np
import pytest

import experiment_engine
from config import TestingConfig
from core.errors import ConfigError
from core.records import read_csv, read_records
from experiment_engine import (
    ExperimentConfig, ExperimentEngine, ExperimentName, aggregate, emit_plot_data, run_trial,
    scaling_slope, summarize_records,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def local_law_payload(**overrides):
    payload = {
        "experiment": "local-law",
        "ensemble": {"N": 64, "p": 0.2, "seed": 5},
        "trials": 3,
        "backend": "accelerated",
        "grid": {"w": 1.0, "eta_points": 4},
    }
    payload.update(overrides)
    return payload


def make_config(payload, out_dir, **overrides):
    return ExperimentConfig.from_dict(payload, out=out_dir, **overrides)


def run(payload, out_dir, **overrides):
    return ExperimentEngine(make_config(payload, out_dir, **overrides)).run()


class TestExperimentConfig:
    def test_defaults_filled(self, out_dir):
        config = make_config(local_law_payload(), out_dir)
        assert config.experiment is ExperimentName.LOCAL_LAW
        assert config.grid["eta_min_exp"] == -0.94
        assert config.grid["eta_points"] == 4
        assert config.acceptance["eps_local_law"] == 0.2
        assert config.acceptance["rel_tol"] == 1e-3
        assert config.name == "local-law"
        assert config.output_dir == out_dir
        assert config.records_path.endswith("local-law.records.jsonl")

    def test_cli_overrides(self, out_dir):
        config = make_config(local_law_payload(), out_dir, trials=7, seed=11, parallel=2,
                             backend="reference")
        assert (config.trials, config.ensemble.seed, config.parallel, config.backend) == (
            7, 11, 2, "reference")

    def test_overrides_do_not_touch_the_payload(self, out_dir):
        payload = local_law_payload()
        make_config(payload, out_dir, trials=9)
        assert payload["trials"] == 3
        assert "output" not in payload

    def test_schema_errors(self, out_dir):
        with pytest.raises(ConfigError) as excinfo:
            make_config(local_law_payload(trials=-1, backend="gpu"), out_dir)
        assert len(excinfo.value.errors) == 2

    def test_local_law_grid_outside_edge_domain(self, out_dir):
        payload = local_law_payload(grid={"w": 1.0, "eta_max_exp": -0.3})
        with pytest.raises(ConfigError):
            make_config(payload, out_dir)

    def test_weak_grid_allows_bulk(self, out_dir):
        payload = local_law_payload(grid={"w": 1.0, "eta_max_exp": -0.3, "weak": True})
        assert make_config(payload, out_dir).grid["weak"]

    def test_universality_trial_floor(self, out_dir):
        payload = {"experiment": "universality", "ensemble": {"N": 12, "p": 0.2}, "trials": 50}
        with pytest.raises(ConfigError):
            make_config(payload, out_dir)
        assert make_config(payload, out_dir, trials=0).trials == 0

    def test_prop51_alias(self, out_dir):
        payload = {"experiment": "boundary-term", "ensemble": {"N": 64, "p": 0.2}, "trials": 1}
        config = make_config(payload, out_dir)
        assert config.experiment is ExperimentName.BOUNDARY_TERM
        assert config.to_dict()["experiment"] == "prop51"
        assert config.name == "prop51"

    def test_prop51_band(self, out_dir):
        payload = {"experiment": "prop51", "ensemble": {"N": 64, "p": 0.2}, "trials": 1,
                   "grid": {"w": 0.5}}
        with pytest.raises(ConfigError):
            make_config(payload, out_dir)

    def test_circular_law_exponent(self, out_dir):
        payload = {"experiment": "circular-law", "ensemble": {"N": 64, "p": 0.2}, "trials": 1,
                   "grid": {"a": 0.3}}
        with pytest.raises(ConfigError):
            make_config(payload, out_dir)

    def test_from_file_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(str(tmp_path / "missing.json"))
        broken = tmp_path / "broken.json"
        broken.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(str(broken))

    def test_edge_rigidity_sizes(self, out_dir):
        payload = {"experiment": "edge-rigidity", "ensemble": {"N": 32, "p": 0.2}, "trials": 4}
        config = make_config(payload, out_dir)
        assert config.grid["N_values"] == [32]
        payload["grid"] = {"N_values": [32, 48]}
        assert make_config(payload, out_dir).total_trials == 8

    def test_to_dict_round_trip(self, out_dir):
        config = make_config(local_law_payload(), out_dir, parallel=3)
        data = config.to_dict()
        assert "parallel" not in data
        assert "output" not in data
        again = ExperimentConfig.from_dict(json.loads(json.dumps(data)), out=out_dir)
        assert again.to_dict() == json.loads(json.dumps(data))


class TestTrials:
    def test_run_trial_is_deterministic(self, out_dir):
        config = make_config(local_law_payload(), out_dir)
        first = run_trial(config, 1)
        assert first == run_trial(config, 1)
        assert first["stream"] == first["trial"] == 1
        assert "timings" not in first
        assert first["backend"].startswith("accelerated/")
        assert first["observables"]["max_real_part"] == 0.0
        assert first != run_trial(config, 2)

    def test_timings_are_opt_in(self, out_dir, monkeypatch):
        monkeypatch.setattr(TestingConfig, "RECORD_TIMINGS", True)
        config = make_config(local_law_payload(), out_dir)
        assert run_trial(config, 0)["timings"]["seconds"] >= 0

    def test_aggregate_without_records(self, out_dir):
        assert aggregate(make_config(local_law_payload(), out_dir), []) == []

    def test_scaling_slope(self):
        assert scaling_slope([100, 400], [0.1, 0.05]) == pytest.approx(-0.5)


class TestEngineRun:
    def test_local_law_run(self, out_dir):
        result = run(local_law_payload(), out_dir)
        header, records, aborted = read_records(result.records_path)
        assert not aborted
        assert header["config"]["experiment"] == "local-law"
        assert header["rng_algorithm"] == "Philox-4x64"
        assert [r["trial"] for r in records] == [0, 1, 2]
        # two ensembles per eta plus the Re g and |Im| rows
        assert len(result.rows) == 2 * 4 + 2
        meta, rows = read_csv(result.summary_path)
        assert meta["config_hash"] == header["config_hash"]
        assert len(rows) == len(result.rows)
        assert result.passed == all(row["pass"] for row in result.rows)

    def test_forced_failure(self, out_dir):
        result = run(local_law_payload(acceptance={"eps_local_law": -5}), out_dir)
        assert not result.passed

    def test_zero_trials(self, out_dir):
        result = run(local_law_payload(trials=0), out_dir)
        assert result.rows == []
        assert result.passed
        _, records, _ = read_records(result.records_path)
        assert records == []

    def test_byte_identical_reruns(self, tmp_path):
        paths = []
        for name in ("first", "second"):
            result = run(local_law_payload(), str(tmp_path / name))
            paths.append(result.records_path)
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            assert a.read() == b.read()

    def test_parallel_matches_serial(self, tmp_path):
        serial = run(local_law_payload(), str(tmp_path / "serial"))
        parallel = run(local_law_payload(), str(tmp_path / "parallel"), parallel=2)
        with open(serial.records_path, "rb") as a, open(parallel.records_path, "rb") as b:
            assert a.read() == b.read()

    def test_failing_trial_aborts(self, out_dir, monkeypatch):
        original = experiment_engine.TRIAL_RUNNERS[ExperimentName.LOCAL_LAW]

        def failing(config, trial):
            if trial == 1:
                raise RuntimeError("solver blew up")
            return original(config, trial)

        monkeypatch.setitem(experiment_engine.TRIAL_RUNNERS, ExperimentName.LOCAL_LAW, failing)
        config = make_config(local_law_payload(), out_dir)
        with pytest.raises(RuntimeError):
            ExperimentEngine(config).run()
        _, records, aborted = read_records(config.records_path)
        assert aborted
        assert len(records) == 1

    def test_summarize_records(self, out_dir):
        result = run(local_law_payload(), out_dir)
        config, rows, aborted = summarize_records(result.records_path)
        assert config.experiment is ExperimentName.LOCAL_LAW
        assert rows == result.rows
        assert not aborted


class TestExperiments:
    def test_edge_rigidity(self, out_dir):
        payload = {"experiment": "edge-rigidity", "ensemble": {"N": 32, "p": 0.3, "seed": 2},
                   "trials": 3, "backend": "accelerated", "grid": {"N_values": [32, 48]}}
        result = run(payload, out_dir)
        assert [row["scope"] for row in result.rows] == ["N=32", "N=32", "N=48", "N=48", "all"]
        path, extra = emit_plot_data(result.records_path, "scaling")
        assert path.endswith("edge-rigidity.scaling.csv")
        assert "slope" in extra
        _, rows = read_csv(path)
        assert [row["N"] for row in rows] == ["32", "48"]

    def test_edge_rigidity_arnoldi(self, out_dir):
        payload = {"experiment": "edge-rigidity", "ensemble": {"N": 200, "p": 0.1, "seed": 2},
                   "trials": 2, "backend": "accelerated", "grid": {"method": "arnoldi", "k": 4}}
        result = run(payload, out_dir)
        _, records, _ = read_records(result.records_path)
        assert all(r["observables"]["N"] == 200 for r in records)
        assert len(result.rows) == 2
        assert all(r["observables"]["method"] == "arnoldi" for r in records)

    def test_edge_rigidity_switches_above_dense_cap(self, out_dir, monkeypatch):
        monkeypatch.setattr(TestingConfig, "DENSE_CAP", 40)
        payload = {"experiment": "edge-rigidity", "ensemble": {"N": 32, "p": 0.3, "seed": 2},
                   "trials": 2, "backend": "accelerated", "grid": {"N_values": [32, 64]}}
        config = ExperimentConfig.from_dict(payload)
        assert config.grid["method"] == "auto"
        result = run(payload, out_dir)
        _, records, _ = read_records(result.records_path)
        methods = {r["observables"]["N"]: r["observables"]["method"] for r in records}
        assert methods == {32: "dense", 64: "arnoldi"}

    def test_delocalization(self, out_dir):
        payload = {"experiment": "delocalization", "ensemble": {"N": 24, "p": 0.3},
                   "trials": 2, "backend": "accelerated"}
        result = run(payload, out_dir)
        assert len(result.rows) == 1
        assert result.rows[0]["n"] == 2

    def test_girko_xcheck(self, out_dir):
        payload = {"experiment": "girko-xcheck", "ensemble": {"N": 16, "p": 0.3},
                   "trials": 2, "backend": "accelerated",
                   "grid": {"grid_cells": 16, "eta_split": True}}
        result = run(payload, out_dir)
        assert len(result.rows) == 2
        assert result.rows[1]["pass"]

    def test_prop51_with_tail(self, out_dir):
        payload = {"experiment": "prop51", "ensemble": {"N": 64, "p": 0.2},
                   "trials": 2, "backend": "accelerated",
                   "grid": {"ibp_tail": True, "grid_cells": 8}}
        result = run(payload, out_dir)
        assert len(result.rows) == 2
        _, records, _ = read_records(result.records_path)
        assert len(records[0]["observables"]["deviation"]) == 2

    def test_flow_variance(self, out_dir):
        payload = {"experiment": "flow-variance", "ensemble": {"N": 16, "p": 0.3},
                   "trials": 2, "backend": "accelerated"}
        result = run(payload, out_dir)
        assert [row["scope"] for row in result.rows] == ["t=0", "t=0.7", "t=inf", "all"]

    def test_circular_law(self, out_dir):
        payload = {"experiment": "circular-law", "ensemble": {"N": 64, "p": 0.2},
                   "trials": 2, "backend": "accelerated"}
        result = run(payload, out_dir)
        assert len(result.rows) == 1

    def test_universality(self, out_dir):
        payload = {"experiment": "universality", "ensemble": {"N": 12, "p": 0.3},
                   "trials": 100, "backend": "accelerated"}
        result = run(payload, out_dir)
        assert [row["scope"] for row in result.rows] == ["fluct", "min_distance",
                                                         "window_count", "all"]
        path, _ = emit_plot_data(result.records_path, "universality")
        _, rows = read_csv(path)
        assert len(rows) == 100 * 2 * 3
        assert {row["ensemble"] for row in rows} == {"er", "ginibre-reference"}

    def test_universality_reject_mode(self, out_dir):
        payload = {"experiment": "universality", "ensemble": {"N": 12, "p": 0.3},
                   "trials": 100, "backend": "accelerated",
                   "grid": {"subject": "ginibre", "control_scale": 1.05, "expect": "reject"}}
        result = run(payload, out_dir)
        assert [row["scope"] for row in result.rows] == ["fluct"]
        path, _ = emit_plot_data(result.records_path, "universality")
        _, rows = read_csv(path)
        assert {row["ensemble"] for row in rows} == {"ginibre", "ginibre-reference"}

    def test_shipped_power_control(self):
        config = ExperimentConfig.from_file(str(CONFIG_DIR / "universality_power.json"))
        assert config.grid["subject"] == config.grid["reference"] == "ginibre"
        assert config.grid["control_scale"] == 1.05
        assert config.grid["expect"] == "reject"


class TestPlotData:
    def test_local_law_table(self, out_dir):
        result = run(local_law_payload(), out_dir)
        path, extra = emit_plot_data(result.records_path, "local-law")
        assert extra == {}
        meta, rows = read_csv(path)
        assert meta["config_hash"]
        assert len(rows) == 2 * 4
        q = np.array([[float(row[k]) for k in ("q10", "q50", "q90")] for row in rows])
        assert np.all(np.diff(q, axis=1) >= 0)

    def test_custom_output(self, out_dir, tmp_path):
        result = run(local_law_payload(), out_dir)
        target = str(tmp_path / "plots" / "ll.csv")
        assert emit_plot_data(result.records_path, "local-law", target)[0] == target

    def test_unknown_kind(self, out_dir):
        result = run(local_law_payload(trials=1), out_dir)
        with pytest.raises(ConfigError):
            emit_plot_data(result.records_path, "histogram")

    def test_wrong_experiment(self, out_dir):
        result = run(local_law_payload(trials=1), out_dir)
        with pytest.raises(ConfigError):
            emit_plot_data(result.records_path, "scaling")
