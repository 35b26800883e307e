"""
Print the run ledger: runs table, activity_logs structure and the latest rows.

Usage: python check_ledger.py [output_dir]
"""

import os
import sqlite3
import sys
from pathlib import Path

from config import DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV
from run_ledger import LEDGER_FILENAME, RunLedger


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    output_dir = argv[0] if argv else os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)
    db_path = Path(output_dir) / LEDGER_FILENAME
    if not db_path.exists():
        print(f"❌ No ledger at {db_path}")
        return 1

    conn = sqlite3.connect(db_path)
    print("=" * 80)
    print(f"ACTIVITY_LOGS TABLE STRUCTURE ({db_path})")
    print("=" * 80)
    for col in conn.execute("PRAGMA table_info(activity_logs)"):
        print(f"  {col[1]} ({col[2]}) - PK: {col[5]}, NOT NULL: {col[3]}")
    conn.close()

    ledger = RunLedger(db_path)
    print("\n" + "=" * 80)
    print("RUNS")
    print("=" * 80)
    for run in ledger.runs():
        mark = '✅' if run['status'] == 'success' else '❌' if run['status'] == 'failed' else '…'
        print(f"  {mark} #{run['run_id']} {run['command']:<8} seed={run['seed']} "
              f"config={run['config_hash'][:12]} {run['started_at']} -> {run['finished_at']}")

    print("\n" + "=" * 80)
    print("LATEST ACTIVITY")
    print("=" * 80)
    rows = ledger.recent_activity(limit=20)
    if not rows:
        print("\nNo data in activity_logs table")
    for row in rows:
        print(f"  [{row['created_at']}] run {row['run_id']} {row['stage']}/{row['activity_type']}: "
              f"{row['description']}")
    print("=" * 80)
    return 0


if __name__ == '__main__':
    sys.exit(main())
