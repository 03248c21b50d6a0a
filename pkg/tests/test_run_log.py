"""
PR 10 — Run Logging and Seed Stream Tests

Testing Endpoints:
1. run-scoped loggers prefix the run id
2. the events log is append-only JSONL, redacted and rotated
3. seed substreams are stable and independent
"""

import json
import logging

import numpy as np
import pytest

from sessionguard.run_log import (
    LOGGER_NAME,
    _JsonFormatter,
    configure_logging,
    events_log_path,
    get_logger,
    write_event,
)
from sessionguard.seeding import SeedError, derive_seed, numpy_rng, torch_generator


class _Collector(logging.Handler):
    def __init__(self):
        super().__init__()
        self.records = []

    def emit(self, record):
        self.records.append(record)


@pytest.fixture
def collected():
    """The package logger stops propagation once configured, so collect on the module logger."""
    base = logging.getLogger(f"{LOGGER_NAME}.tests")
    handler = _Collector()
    previous = base.level
    base.addHandler(handler)
    base.setLevel(logging.INFO)
    yield handler.records
    base.removeHandler(handler)
    base.setLevel(previous)


@pytest.mark.pr10
def test_logger_prefixes_run_id(collected):
    """
    Testing Endpoint 1: [run_id=...] prefix and run_id on the record
    """
    get_logger("tests", run_id="train-abc").info("trained %d models", 3)
    record = collected[-1]
    assert record.getMessage() == "[run_id=train-abc] trained 3 models"
    assert record.run_id == "train-abc"

    get_logger("tests").info("no run")
    assert collected[-1].getMessage() == "no run"


@pytest.mark.pr10
def test_json_formatter():
    record = logging.LogRecord(f"{LOGGER_NAME}.x", logging.WARNING, __file__, 1, "flagged %s", ("cell",), None)
    record.run_id = "sweep-1"
    payload = json.loads(_JsonFormatter().format(record))
    assert payload["level"] == "WARNING"
    assert payload["msg"] == "flagged cell"
    assert payload["run_id"] == "sweep-1"


@pytest.mark.pr10
def test_configure_logging_is_idempotent():
    base = configure_logging()
    count = len(base.handlers)
    assert configure_logging() is base
    assert len(base.handlers) == count


@pytest.mark.pr10
def test_events_log(tmp_path):
    """
    Testing Endpoint 2: one JSON object per line, secrets dropped
    """
    write_event(tmp_path, {"event": "train", "seed": 7, "api_key": "secret"}, run_id="r1")
    write_event(tmp_path, {"event": "evaluate", "seed": 7})

    lines = events_log_path(tmp_path).read_text(encoding="utf-8").splitlines()
    events = [json.loads(line) for line in lines]
    assert events[0] == {"event": "train", "seed": 7, "run_id": "r1"}
    assert events[1] == {"event": "evaluate", "seed": 7}


@pytest.mark.pr10
def test_events_log_rotation(tmp_path, monkeypatch):
    monkeypatch.setenv("SESSIONGUARD_LOG_MAX_BYTES", "10")
    write_event(tmp_path, {"event": "first", "padding": "x" * 20})
    write_event(tmp_path, {"event": "second"})

    rotated = tmp_path / "events.1.log"
    assert json.loads(rotated.read_text(encoding="utf-8"))["event"] == "first"
    assert json.loads(events_log_path(tmp_path).read_text(encoding="utf-8"))["event"] == "second"


@pytest.mark.pr10
def test_seed_streams():
    """
    Testing Endpoint 3: same key, same draws; any key change, new draws
    """
    assert derive_seed(42, "split") == derive_seed(42, "split")
    assert derive_seed(42, "split") != derive_seed(42, "init")
    assert derive_seed(42, "subsample", 0, "0.0100") != derive_seed(42, "subsample", 1, "0.0100")
    assert 0 <= derive_seed(7, "corpus") < 2 ** 31

    np.testing.assert_array_equal(numpy_rng(7, "augment", 3).random(5), numpy_rng(7, "augment", 3).random(5))
    a = torch_generator(7, "shuffle")
    b = torch_generator(7, "shuffle")
    assert a.initial_seed() == b.initial_seed() == derive_seed(7, "shuffle")

    with pytest.raises(SeedError):
        derive_seed(42, "weights")
