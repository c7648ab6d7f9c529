"""Shared test doubles: a rule-based stand-in for the chat model and raw-record oracles."""

import json
import re
from collections import defaultdict
from pathlib import Path

from vidagent.aggregator import SUMMARY_SYSTEM
from vidagent.memory import SELECTION_SYSTEM
from vidagent.planner.prompt import EXPANSION_HEADER
from vidagent.planner.search import PLANNER_SYSTEM

FIXTURES = Path(__file__).parent / "fixtures"
SCENES = ("kitchen", "street", "park")

_STEP = re.compile(r"^Action: (\S+)\nAction Input: (.*)$", re.MULTILINE)
_OBS = re.compile(r"^Observation: (.*)$", re.MULTILINE)
_TRIED = re.compile(r"\| Action: (.+?) \| Action Input: (.*)$", re.MULTILINE)
_PLURALS = {"people": "person", "persons": "person", "dogs": "dog", "cars": "car", "cups": "cup",
            "balls": "ball", "bicycles": "bicycle"}


def category_of(question: str) -> str:
    m = re.search(r"[Hh]ow many (\w+)", question)
    word = m.group(1).lower() if m else "person"
    return _PLURALS.get(word, word)


def video_llm(request) -> str:
    """Deterministic replies for every prompt family the package sends."""
    system = request.system_prompt
    last = request.turns[-1][1]
    if system == SELECTION_SYSTEM:
        return "Action: both construction"
    if system == SUMMARY_SYSTEM:
        first = re.search(r"^Answer 1 \(.*?\): (.*)$", last, re.MULTILINE).group(1)
        return f"Combined: {first}"
    if system == PLANNER_SYSTEM:
        return _planner_reply(request.turns[0][1])
    if "Database schema:" in system:
        return _sql_reply(request)
    raise AssertionError(f"unexpected prompt family: {system[:60]!r}")


def _planner_reply(prompt: str) -> str:
    body = prompt[prompt.rindex("\nQuestion: ") + 1:]
    question = body.splitlines()[0][len("Question: "):]
    video = re.search(r"working on the video at (\S+)\.", prompt).group(1)
    head, _, rest = body.partition(EXPANSION_HEADER)
    tried = set(_TRIED.findall(rest))
    steps = _STEP.findall(head)
    cat = category_of(question)
    plan = [
        ("VideoCount", f"{video}#How many {cat} instances are there?"),
        ("VideoWhat", f"{video}#What is each {cat} doing?"),
        ("VideoOther", f"{video}#How many frames are there?"),
    ]
    if steps:
        obs = _OBS.findall(head)[-1]
        if ("Final Answer", obs) not in tried:
            return f"Thought: I now know the final answer\nFinal Answer: {obs}"
    for action, inp in plan:
        if (action, inp) not in tried and (action, inp) not in steps:
            return f"Thought: I should ask {action}.\nAction: {action}\nAction Input: {inp}"
    action, inp = plan[0]
    return f"Thought: I should ask {action}.\nAction: {action}\nAction Input: {inp}"


def _sql_reply(request) -> str:
    question = request.turns[0][1][len("Question: "):]
    last = request.turns[-1][1]
    if last.startswith("Result:"):
        rows = last.split("\n\n")[0].splitlines()[2:]
        return "Answer: " + ", ".join(rows) if rows and rows[0] != "(no rows)" else "Answer: nothing found"
    cat = category_of(question)
    if question.startswith("How many frames"):
        return "SQL: SELECT COUNT(*) FROM frames"
    if question.startswith("How many"):
        return f"SQL: SELECT COUNT(*) FROM instances WHERE category = '{cat}'"
    return f"SQL: SELECT action FROM instances WHERE category = '{cat}' ORDER BY instance_id"


# --------------------------------------------------------------------------
# oracles computed straight from the record files

def _valid(rec) -> bool:
    if not isinstance(rec, dict) or rec.get("kind") not in ("detection", "caption", "asr", "ocr", "action"):
        return False
    if not isinstance(rec.get("frame_index"), int) or rec["frame_index"] < 0:
        return False
    p = rec.get("payload", {})
    if rec["kind"] == "detection":
        if not {"instance_id", "category", "box"} <= set(p):
            return False
        x1, y1, x2, y2 = p["box"]
        return x1 < x2 and y1 < y2
    return True


def raw_records(name: str) -> list[dict]:
    out = []
    for line in (FIXTURES / f"{name}.jsonl").read_text().splitlines():
        try:
            rec = json.loads(line)
        except ValueError:
            continue
        if _valid(rec):
            out.append(rec)
    return out


def tally_instances(name: str) -> dict[str, int]:
    """Distinct instance ids per category among valid detections."""
    seen = defaultdict(set)
    for rec in raw_records(name):
        if rec["kind"] == "detection":
            seen[rec["payload"]["category"]].add(rec["payload"]["instance_id"])
    return {cat: len(ids) for cat, ids in seen.items()}


def tally_frames(name: str) -> int:
    return len({r["frame_index"] for r in raw_records(name) if r["kind"] in ("caption", "asr", "ocr")})


def tally_detections(name: str) -> int:
    return sum(1 for r in raw_records(name) if r["kind"] == "detection")


def planner_context(prompt: str):
    """(steps, observations, tried) seen by the model in a planner prompt."""
    body = prompt[prompt.rindex("\nQuestion: ") + 1:]
    head, _, rest = body.partition(EXPANSION_HEADER)
    return _STEP.findall(head), _OBS.findall(head), set(_TRIED.findall(rest))


def toy_planner(tools, video="v.mp4"):
    """Calls the first untried tool, then answers with the last observation."""

    def respond(request) -> str:
        steps, observations, tried = planner_context(request.turns[0][1])
        if steps and ("Final Answer", observations[-1]) not in tried:
            return f"Thought: done\nFinal Answer: {observations[-1]}"
        for name in tools:
            inp = f"{video}#step {len(steps)}"
            if (name, inp) not in tried:
                return f"Thought: try {name}\nAction: {name}\nAction Input: {inp}"
        return f"Thought: try {tools[0]}\nAction: {tools[0]}\nAction Input: {video}#step {len(steps)}"

    return respond
