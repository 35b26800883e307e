"""
Run ledger: an append-only SQLite record of CLI runs and stage activity.
Timestamps live here only, never in stage manifests.
"""

import logging
import sqlite3
from datetime import datetime
from pathlib import Path

logger = logging.getLogger(__name__)

LEDGER_FILENAME = 'ledger.db'

SCHEMA = """
CREATE TABLE IF NOT EXISTS runs (
    run_id       INTEGER PRIMARY KEY AUTOINCREMENT,
    command      TEXT NOT NULL,
    config_hash  TEXT NOT NULL,
    seed         INTEGER,
    started_at   TEXT NOT NULL,
    finished_at  TEXT,
    status       TEXT NOT NULL DEFAULT 'running'
);

CREATE TABLE IF NOT EXISTS activity_logs (
    log_id        INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id        INTEGER REFERENCES runs(run_id),
    stage         TEXT NOT NULL,
    activity_type TEXT NOT NULL,
    description   TEXT,
    created_at    TEXT NOT NULL
);

CREATE INDEX IF NOT EXISTS idx_activity_run ON activity_logs(run_id);
"""


def _now():
    return datetime.now().strftime('%Y-%m-%d %H:%M:%S')


class RunLedger:
    """Ledger handler; one connection per operation"""

    def __init__(self, db_path):
        self.db_path = str(db_path)
        self.conn = None

    @classmethod
    def for_output_dir(cls, output_dir):
        return cls(Path(output_dir) / LEDGER_FILENAME)

    # ------------------------------------------------------------------
    # Connection helpers
    # ------------------------------------------------------------------
    def connect(self):
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self.conn = sqlite3.connect(self.db_path)
        self.conn.row_factory = sqlite3.Row
        return self.conn

    def close(self):
        if self.conn:
            self.conn.close()
            self.conn = None

    # ------------------------------------------------------------------
    # Initialization
    # ------------------------------------------------------------------
    def initialize(self):
        conn = self.connect()
        try:
            conn.executescript(SCHEMA)
            conn.commit()
        finally:
            self.close()

    # ------------------------------------------------------------------
    # Runs
    # ------------------------------------------------------------------
    def start_run(self, command, config_hash, seed=None):
        self.initialize()
        conn = self.connect()
        try:
            cursor = conn.execute("""
                INSERT INTO runs (command, config_hash, seed, started_at, status)
                VALUES (?, ?, ?, ?, 'running')
            """, (command, config_hash, seed, _now()))
            conn.commit()
            return cursor.lastrowid
        finally:
            self.close()

    def finish_run(self, run_id, status):
        conn = self.connect()
        try:
            conn.execute("""
                UPDATE runs SET finished_at = ?, status = ?
                WHERE run_id = ?
            """, (_now(), status, run_id))
            conn.commit()
        finally:
            self.close()

    # ------------------------------------------------------------------
    # Activity
    # ------------------------------------------------------------------
    def log_activity(self, run_id, stage, activity_type, description):
        """Never raises; returns False when the row could not be written"""
        try:
            conn = self.connect()
        except (sqlite3.Error, OSError) as e:
            logger.warning("ledger unavailable: %s", e)
            return False

        try:
            conn.execute("""
                INSERT INTO activity_logs
                (run_id, stage, activity_type, description, created_at)
                VALUES (?, ?, ?, ?, ?)
            """, (run_id, stage, activity_type, description, _now()))
            conn.commit()
            return True
        except sqlite3.Error as e:
            logger.warning("error logging activity: %s", e)
            conn.rollback()
            return False
        finally:
            self.close()

    def recent_activity(self, limit=20):
        conn = self.connect()
        try:
            rows = conn.execute("""
                SELECT a.log_id, a.run_id, r.command, a.stage, a.activity_type,
                       a.description, a.created_at
                FROM activity_logs a
                LEFT JOIN runs r ON r.run_id = a.run_id
                ORDER BY a.log_id DESC
                LIMIT ?
            """, (limit,)).fetchall()
            return [dict(row) for row in rows]
        except sqlite3.OperationalError:
            return []
        finally:
            self.close()

    def runs(self):
        conn = self.connect()
        try:
            rows = conn.execute('SELECT * FROM runs ORDER BY run_id').fetchall()
            return [dict(row) for row in rows]
        except sqlite3.OperationalError:
            return []
        finally:
            self.close()
