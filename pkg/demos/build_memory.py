"""Build both memory variants from an extraction-record file and poke at them with SQL.

    python3 demos/build_memory.py [records.jsonl]
"""

import logging
import sys
from pathlib import Path

from vidagent.memory import MemoryTypeSelection, execute_sql, ingest_file

ROOT = Path(__file__).resolve().parent.parent
records = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "tests" / "fixtures" / "street.jsonl"

logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")

memory = ingest_file(records, MemoryTypeSelection(True, True))
print(f"video {memory.video_id}: {memory.row_counts()} ({memory.rejected} records rejected)")

for query in [
    "SELECT category, COUNT(*) AS n FROM instances GROUP BY category ORDER BY n DESC",
    "SELECT clip_id, start_frame, end_frame, caption FROM clips ORDER BY clip_id",
    "SELECT instance_id, action FROM instances WHERE action IS NOT NULL",
]:
    print(f"\n> {query}")
    print(execute_sql(memory, query).to_text())

# the store is read-only from the tools' point of view
try:
    execute_sql(memory, "DELETE FROM instances")
except Exception as exc:
    print(f"\nwrite refused: {type(exc).__name__}: {exc}")
