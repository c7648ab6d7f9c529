"""Replay a recorded two-iteration planner session and print the search tree.

The cassette holds every chat completion of the original run, so this needs no
network access and prints the same tree every time.
"""

from pathlib import Path

from vidagent.aggregator import summarize
from vidagent.backend import RecordReplayBackend
from vidagent.memory import MemoryTypeSelection, ingest_file
from vidagent.planner import RewardConfig, run
from vidagent.toolkit import default_registry

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"
question = "How many people are in the kitchen?"

memory = ingest_file(FIXTURES / "kitchen.jsonl", MemoryTypeSelection(True, True))
backend = RecordReplayBackend(None, FIXTURES / "kitchen_session.cassette.jsonl", "replay")
result = run(question, memory.video_id, memory, default_registry(), backend, RewardConfig(n_iterations=2), "mcts", 0)

for node in result.tree:
    label = node.action or "(root)"
    if node.final_answer is not None:
        label = f"Final Answer: {node.final_answer}"
    print(f"{'  ' * node.depth}#{node.id} {label}  R={node.reward:+.3f} {node.outcome}")

for entry in result.iterations:
    print(entry)
print("answers:", [a.text for a in result.answers])
print("summary:", summarize(result.answers, question, backend))
