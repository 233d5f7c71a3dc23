"""
rmtlab - Record persistence
===========================
Append-only newline-delimited JSON trial records and CSV tables.

Every file starts with a header: the full experiment config, its hash,
the code version, backend identifiers and the RNG algorithm.
"""

import csv
import hashlib
import json
import math
import os
import threading
from contextlib import contextmanager
from typing import Dict, Generator, Iterable, List, Optional, Sequence, Tuple

import numpy as np

HEADER_KEY = "header"
TRAILER_ABORTED = {"status": "aborted"}


def _jsonable(value):
    """numpy scalars/arrays and complex numbers to plain JSON values"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [_jsonable(float(value.real)), _jsonable(float(value.imag))]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no NaN/inf
        return value if math.isfinite(value) else None
    return value


def canonical_json(payload) -> str:
    return json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":"))


def config_hash(config: Dict) -> str:
    """sha256 of the canonical JSON form"""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def make_header(config: Dict, code_version: str, backends: Sequence[str],
                rng_algorithm: str) -> Dict:
    return {
        HEADER_KEY: True,
        "config": config,
        "config_hash": config_hash(config),
        "code_version": code_version,
        "backends": list(backends),
        "rng_algorithm": rng_algorithm,
    }


class RecordSink:
    """
    Serialized writer for one records file.

    Worker results arrive in any order; write() holds a lock so lines never
    interleave. The header is written on open.
    """

    def __init__(self, path: str, header: Dict):
        self.path = path
        self.header = header
        self._lock = threading.Lock()
        self._handle = None
        self.count = 0

    def open(self):
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8")
        self._write_line(self.header)
        return self

    def _write_line(self, payload: Dict):
        self._handle.write(canonical_json(payload) + "\n")
        self._handle.flush()

    def write(self, record: Dict):
        with self._lock:
            self._write_line(record)
            self.count += 1

    def abort(self):
        with self._lock:
            self._write_line(TRAILER_ABORTED)

    def close(self):
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    @contextmanager
    def session(self) -> Generator["RecordSink", None, None]:
        """Open, yield, close; an exception leaves the aborted trailer behind"""
        self.open()
        try:
            yield self
        except BaseException:
            self.abort()
            raise
        finally:
            self.close()


def read_records(path: str) -> Tuple[Dict, List[Dict], bool]:
    """
    Returns:
        (header, trial records, aborted flag)
    """
    header: Dict = {}
    records: List[Dict] = []
    aborted = False
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            if payload.get(HEADER_KEY):
                header = payload
            elif payload == TRAILER_ABORTED:
                aborted = True
            else:
                records.append(payload)
    return header, records, aborted


def metadata_line(header: Dict) -> str:
    meta = {key: header.get(key) for key in ("config_hash", "code_version", "backends", "rng_algorithm")}
    return "# " + canonical_json(meta)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Dict],
              header: Optional[Dict] = None) -> int:
    """CSV with an optional `#` metadata line; returns the number of rows"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header is not None:
            handle.write(metadata_line(header) + "\n")
        writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _jsonable(v) for k, v in row.items()})
            count += 1
    return count


def read_csv(path: str) -> Tuple[Optional[Dict], List[Dict]]:
    """Inverse of write_csv; values stay strings"""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        first = handle.readline()
        meta = None
        if first.startswith("#"):
            meta = json.loads(first[1:].strip())
        else:
            handle.seek(0)
        return meta, list(csv.DictReader(handle))
