# utils/run_logger.py
import json
import logging
from pathlib import Path
from threading import Lock

from core.event_bus import ArchiveEvent

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"


def setup_logging(level="INFO"):
    """Console logging for the CLI; called once by the entry point."""
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
    # noisy third-party loggers
    for name in ("matplotlib", "PIL"):
        logging.getLogger(name).setLevel(logging.WARNING)


class RunLogger:
    """
    Per-run logging: a run.log file handler on the root logger and a
    line-delimited JSON stream of archive events.
    """

    def __init__(self, run_dir, events_name="events.ndjson", append=False):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._event_lock = Lock()

        self.log_file = self.run_dir / "run.log"
        self.handler = logging.FileHandler(self.log_file, encoding="utf-8")
        self.handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(self.handler)

        self.events_file = self.run_dir / events_name
        if not append or not self.events_file.exists():
            self.events_file.write_text("", encoding="utf-8")
        self._events_fh = open(self.events_file, "a", encoding="utf-8")

    # ---------- events ----------
    def write_event(self, event: ArchiveEvent):
        with self._event_lock:
            self._events_fh.write(json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")

    def rewrite_events(self, events):
        """Replace the stream with an authoritative event list (used on resume)."""
        with self._event_lock:
            self._events_fh.close()
            with open(self.events_file, "w", encoding="utf-8") as f:
                for event in events:
                    f.write(json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            self._events_fh = open(self.events_file, "a", encoding="utf-8")

    def attach(self, bus):
        bus.subscribe("*", self.write_event)

    def flush(self):
        with self._event_lock:
            self._events_fh.flush()

    def close(self):
        with self._event_lock:
            if not self._events_fh.closed:
                self._events_fh.close()
        logging.getLogger().removeHandler(self.handler)
        self.handler.close()


def read_events(path):
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(ArchiveEvent.from_dict(json.loads(line)))
    return events
