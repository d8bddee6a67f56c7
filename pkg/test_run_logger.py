import json
import logging
import pickle

import pytest

from core.event_bus import ArchiveEvent, EventBus
from utils.config import RunConfig
from utils.errors import CheckpointError, ErrorLedger
from utils.manifest import build_manifest, load_manifest, save_manifest, verify_manifest
from utils.run_logger import RunLogger, read_events


def _event(seq, category="placed_new"):
    return ArchiveEvent(seq, category, seq // 2, {"row": 1, "col": seq, "genome_id": f"g{seq}", "fitness": 0.5})


# ---------- event bus ----------

def test_bus_delivers_category_then_wildcard():
    bus = EventBus()
    seen = []
    bus.subscribe("*", lambda e: seen.append(("all", e.seq)))
    bus.subscribe("placed_new", lambda e: seen.append(("placed", e.seq)))
    bus.emit(_event(1))
    bus.emit(_event(2, "replaced"))
    assert seen == [("placed", 1), ("all", 1), ("all", 2)]


def test_failing_subscriber_does_not_stop_delivery(caplog):
    bus = EventBus()
    seen = []

    def broken(event):
        raise RuntimeError("disk full")

    bus.subscribe("*", broken)
    bus.subscribe("*", seen.append)
    bus.emit(_event(1))
    assert len(seen) == 1
    assert "disk full" in caplog.text


def test_bus_pickles_without_subscribers():
    bus = EventBus()
    bus.subscribe("*", print)
    restored = pickle.loads(pickle.dumps(bus))
    assert dict(restored.subscribers) == {}


def test_event_dict_round_trip():
    e = _event(3)
    assert ArchiveEvent.from_dict(json.loads(json.dumps(e.to_dict()))) == e
    assert e != _event(4)


# ---------- run logger ----------

def test_run_logger_streams_events(tmp_path):
    run_log = RunLogger(tmp_path / "run")
    bus = EventBus()
    run_log.attach(bus)
    for i in range(5):
        bus.emit(_event(i))
    logging.warning("[Test] hello from the run")
    run_log.close()

    assert read_events(tmp_path / "run" / "events.ndjson") == [_event(i) for i in range(5)]
    assert "hello from the run" in (tmp_path / "run" / "run.log").read_text(encoding="utf-8")
    assert run_log.handler not in logging.getLogger().handlers


def test_run_logger_append_and_rewrite(tmp_path):
    first = RunLogger(tmp_path)
    first.write_event(_event(1))
    first.close()

    second = RunLogger(tmp_path, append=True)
    second.write_event(_event(2))
    second.flush()
    assert [e.seq for e in read_events(tmp_path / "events.ndjson")] == [1, 2]

    second.rewrite_events([_event(1)])
    second.write_event(_event(7))
    second.close()
    assert [e.seq for e in read_events(tmp_path / "events.ndjson")] == [1, 7]

    RunLogger(tmp_path).close()
    assert read_events(tmp_path / "events.ndjson") == []


# ---------- error ledger ----------

def test_error_ledger(tmp_path):
    ledger = ErrorLedger(tmp_path / "db" / "errors.db")
    assert ledger.count() == 0
    ledger.report_error("Engine", "candidate 3 failed")
    ledger.report_error("RefDB", "Skipping a.wav", severity="ERROR")
    assert ledger.count() == 2
    latest = ledger.get_errors(limit=1)
    assert len(latest) == 1
    assert latest[0][1:] == ("ERROR", "RefDB", "Skipping a.wav")
    assert ErrorLedger(tmp_path / "db" / "errors.db").count() == 2


# ---------- manifest ----------

def test_manifest_round_trip_and_guard(tmp_path):
    config = RunConfig()
    manifest = build_manifest(config, store_digest="abc")
    assert manifest["generations"] == {"seed": 8, "evolution": 4680, "total": 4688}
    save_manifest(tmp_path, manifest)
    loaded = load_manifest(tmp_path)
    assert loaded["config_hash"] == config.config_hash()

    verify_manifest(loaded, config, "abc")
    with pytest.raises(CheckpointError, match="hash"):
        verify_manifest(loaded, config.with_overrides(run={"seed": 5}), "abc")
    with pytest.raises(CheckpointError, match="digest"):
        verify_manifest(loaded, config, "def")


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError):
        load_manifest(tmp_path)
