import json
import os

import numpy as np
import pytest

from core.records import (
    RecordSink, canonical_json, config_hash, make_header, read_csv, read_records, write_csv,
)

CONFIG = {"experiment": "local-law", "ensemble": {"N": 64, "p": 0.5}, "seed": 1}


def _header():
    return make_header(CONFIG, "0.1.0", ["accelerated/scipy-1.11"], "philox")


class TestCanonicalJson:
    def test_key_order_does_not_matter(self):
        reordered = {"seed": 1, "ensemble": {"p": 0.5, "N": 64}, "experiment": "local-law"}
        assert config_hash(reordered) == config_hash(CONFIG)
        assert len(config_hash(CONFIG)) == 64

    def test_numpy_and_complex_values(self):
        payload = {"a": np.float64(1.5), "b": np.int64(3), "c": 1 + 2j,
                   "d": np.array([1.0, 2.0]), "e": np.bool_(True), "f": float("nan")}
        assert json.loads(canonical_json(payload)) == {
            "a": 1.5, "b": 3, "c": [1.0, 2.0], "d": [1.0, 2.0], "e": True, "f": None,
        }

    def test_header(self):
        header = _header()
        assert header["config_hash"] == config_hash(CONFIG)
        assert header["rng_algorithm"] == "philox"


class TestRecordSink:
    def test_session_round_trip(self, tmp_path):
        path = str(tmp_path / "nested" / "run.records.jsonl")
        with RecordSink(path, _header()).session() as sink:
            sink.write({"trial": 0, "value": 0.25})
            sink.write({"trial": 1, "value": 0.5})
        header, records, aborted = read_records(path)
        assert header["config"] == CONFIG
        assert [r["trial"] for r in records] == [0, 1]
        assert not aborted
        assert sink.count == 2

    def test_exception_leaves_aborted_trailer(self, tmp_path):
        path = str(tmp_path / "run.records.jsonl")
        with pytest.raises(RuntimeError):
            with RecordSink(path, _header()).session() as sink:
                sink.write({"trial": 0})
                raise RuntimeError("worker died")
        _, records, aborted = read_records(path)
        assert aborted
        assert len(records) == 1
        with open(path, encoding="utf-8") as handle:
            assert json.loads(handle.readlines()[-1]) == {"status": "aborted"}

    def test_lines_are_canonical(self, tmp_path):
        path = str(tmp_path / "run.records.jsonl")
        with RecordSink(path, _header()).session() as sink:
            sink.write({"b": 1, "a": 2})
        with open(path, encoding="utf-8") as handle:
            assert handle.readlines()[1].strip() == '{"a":2,"b":1}'


class TestCsv:
    def test_round_trip_with_metadata(self, tmp_path):
        path = str(tmp_path / "out" / "summary.csv")
        rows = [{"eta": 0.1, "q50": 0.3, "ignored": "x"}, {"eta": 0.2, "q50": np.float64(0.4)}]
        count = write_csv(path, ["eta", "q50"], rows, _header())
        assert count == 2
        meta, parsed = read_csv(path)
        assert meta["config_hash"] == config_hash(CONFIG)
        assert parsed == [{"eta": "0.1", "q50": "0.3"}, {"eta": "0.2", "q50": "0.4"}]

    def test_without_metadata(self, tmp_path):
        path = str(tmp_path / "plain.csv")
        write_csv(path, ["a"], [{"a": 1}])
        meta, parsed = read_csv(path)
        assert meta is None
        assert parsed == [{"a": "1"}]
        assert os.path.getsize(path) > 0
