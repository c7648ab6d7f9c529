"""ReAct text grammar: parsing model completions and validating transcripts."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ParseFailure

STOP = "Observation:"
FINAL_ACTION = "Final Answer"

_ACTION = re.compile(r"^[ \t]*Action[ \t]*:(.*)$", re.MULTILINE)
_INPUT = re.compile(r"^[ \t]*Action[ \t]+Input[ \t]*:(.*)$", re.MULTILINE)
_FINAL = re.compile(r"Final[ \t]+Answer[ \t]*:", re.IGNORECASE)
_THOUGHT = re.compile(r"^\s*Thought\s*:\s*", re.IGNORECASE)


@dataclass(frozen=True)
class Step:
    """One parsed completion: a tool call, or a final answer when ``final`` is set."""

    thought: str
    action: str = ""
    action_input: str = ""
    final: str | None = None

    @property
    def is_final(self) -> bool:
        return self.final is not None


def _thought(text: str) -> str:
    return " ".join(_THOUGHT.sub("", text, count=1).split())


def parse_completion(text: str) -> Step:
    final = _FINAL.search(text)
    action = _ACTION.search(text)
    if final and (action is None or final.start() < action.start()):
        answer = text[final.end():].strip()
        if not answer:
            raise ParseFailure("empty Final Answer")
        return Step(_thought(text[:final.start()]), final=answer)
    if action is None:
        raise ParseFailure("completion has neither 'Action:' nor 'Final Answer:'")
    inp = _INPUT.search(text, action.end())
    if inp is None:
        raise ParseFailure("'Action:' without a following 'Action Input:' line")
    name = action.group(1).strip()
    if not name:
        raise ParseFailure("empty Action")
    return Step(_thought(text[:action.start()]), name, inp.group(1).strip())


def format_step(thought: str, action: str, action_input: str, observation: str | None) -> str:
    out = f"Thought: {thought}\nAction: {action}\nAction Input: {action_input}\n"
    if observation is not None:
        out += f"Observation: {observation}\n"
    return out


def format_final(thought: str, answer: str) -> str:
    return f"Thought: {thought}\nFinal Answer: {answer}\n"


def validate_transcript(text: str) -> list[dict]:
    """Check a transcript against the ReAct grammar and return its blocks.

    Blocks are Thought/Action/Action Input/Observation groups, optionally
    terminated by one Thought/Final Answer group. Observation, thought and
    final-answer text may continue over several lines.
    """
    lines = text.splitlines()
    blocks: list[dict] = []
    i = 0
    n = len(lines)

    def take(prefix: str) -> str:
        nonlocal i
        if i >= n or not lines[i].startswith(prefix):
            got = lines[i] if i < n else "<end>"
            raise ParseFailure(f"line {i + 1}: expected {prefix!r}, got {got!r}")
        value = lines[i][len(prefix):].strip()
        i += 1
        return value

    def continuation(stop_prefixes: tuple[str, ...]) -> list[str]:
        nonlocal i
        extra = []
        while i < n and not lines[i].startswith(stop_prefixes):
            extra.append(lines[i])
            i += 1
        return extra

    finished = False
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        if finished:
            raise ParseFailure(f"line {i + 1}: content after Final Answer")
        thought = take("Thought:")
        continuation(("Action:", "Final Answer:"))
        if i < n and lines[i].startswith("Final Answer:"):
            answer = take("Final Answer:")
            rest = continuation(("Thought:",))
            if i < n:
                raise ParseFailure(f"line {i + 1}: content after Final Answer")
            blocks.append({"thought": thought, "final_answer": "\n".join([answer] + rest).strip()})
            finished = True
            continue
        action = take("Action:")
        action_input = take("Action Input:")
        observation = take("Observation:")
        rest = continuation(("Thought:",))
        blocks.append({
            "thought": thought,
            "action": action,
            "action_input": action_input,
            "observation": "\n".join([observation] + rest).strip(),
        })
    return blocks
