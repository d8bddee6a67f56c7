# utils/errors.py
import logging
import sqlite3
import threading
from datetime import datetime
from pathlib import Path


class ElitesError(Exception):
    """Root of every error raised by the sound-elites engine."""


class GenomeError(ElitesError):
    pass


class GenomeDecodeError(GenomeError):
    """Malformed serialized genome; `field` names the offending entry."""

    def __init__(self, field: str, reason: str):
        self.field = field
        super().__init__(f"cannot decode genome field '{field}': {reason}")


class MutationError(GenomeError):
    pass


class RenderError(ElitesError):
    pass


class FeatureError(ElitesError):
    pass


class RefdbError(ElitesError):
    pass


class ProjectionError(ElitesError):
    pass


class FitnessError(ElitesError):
    pass


class ArchiveError(ElitesError):
    pass


class CheckpointError(ElitesError):
    pass


class ConfigError(ElitesError):
    pass


class EngineAbort(ElitesError):
    pass


class UsageError(ElitesError):
    pass


class ErrorLedger:
    """
    sqlite journal of recoverable failures (invalid candidates, skipped files).
    One table, append-only, guarded by a lock so worker callbacks can report too.
    """

    def __init__(self, db_path):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self._init_db()

    def _get_conn(self):
        return sqlite3.connect(self.db_path, check_same_thread=False)

    def _init_db(self):
        with self._get_conn() as conn:
            conn.execute("""
            CREATE TABLE IF NOT EXISTS errors (
                time TEXT,
                severity TEXT,
                module TEXT,
                description TEXT
            )
            """)
            conn.commit()

    def report_error(self, module: str, description: str, severity="WARNING"):
        now = datetime.now().isoformat()
        try:
            with self.lock:
                with self._get_conn() as conn:
                    conn.execute(
                        "INSERT INTO errors VALUES (?, ?, ?, ?)",
                        (now, severity, module, description)
                    )
                    conn.commit()
        except sqlite3.Error as e:
            logging.error(f"[ErrorLedger] Failed to record error: {e}")

        logging.log(getattr(logging, severity, logging.WARNING), f"[{module}] {description}")

    def get_errors(self, limit=50):
        with self._get_conn() as conn:
            cur = conn.execute(
                "SELECT * FROM errors ORDER BY rowid DESC LIMIT ?",
                (limit,)
            )
            return cur.fetchall()

    def count(self) -> int:
        with self._get_conn() as conn:
            return conn.execute("SELECT COUNT(*) FROM errors").fetchone()[0]
