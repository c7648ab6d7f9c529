"""Drive the Count and What sub-task tools with scripted model replies.

Each tool turns a sub-question into SQL, runs it on the memory and phrases the
result. The replies below stand in for a chat model; the second script shows a
bad query being fed back and corrected.
"""

from pathlib import Path

from vidagent.backend import ScriptedBackend
from vidagent.memory import MemoryTypeSelection, ingest_file
from vidagent.toolkit import run_subtask_tool

ROOT = Path(__file__).resolve().parent.parent
memory = ingest_file(ROOT / "tests" / "fixtures" / "kitchen.jsonl", MemoryTypeSelection(True, True))

count_model = ScriptedBackend([
    "SQL: SELECT COUNT(*) FROM instances WHERE category = 'person'",
    "Answer: 2",
])
print("Count:", run_subtask_tool("Count", memory, "How many people are in the kitchen?", count_model))

what_model = ScriptedBackend([
    "SQL: SELECT action FROM instance WHERE category = 'person'",
    "SQL: SELECT action FROM instances WHERE category = 'person' ORDER BY instance_id",
    "Answer: one person chops vegetables, the other stirs a pot and drinks",
])
print("What:", run_subtask_tool("What", memory, "What are the people doing?", what_model))
print("error fed back on the second turn:", what_model.requests[1].turns[-1][1].splitlines()[0])
