"""SQL-writing sub-agents for the When/Why/What/How/Count/Other sub-task tools."""

from __future__ import annotations

import logging
import re
from functools import lru_cache
from importlib import resources
from typing import Callable

from ..backend import ChatBackend, ChatRequest
from ..errors import SqlError
from ..memory import ResultTable, TaskMemory, execute_sql, schema_description
from .grammar import ToolInvocation
from .registry import Tool, ToolContext, ToolSpec

logger = logging.getLogger(__name__)

SUBTASK_KINDS = ("When", "Why", "What", "How", "Count", "Other")
SQL_ATTEMPTS = 3
FAILED_PREFIX = "SUBTASK_FAILED: "

_FENCE = re.compile(r"```(?:sql)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)
_SQL_LINE = re.compile(r"^\s*SQL\s*:\s*", re.IGNORECASE)

_DESCRIPTIONS = {
    "When": "Use for questions about when something happens or in which order events occur.",
    "Why": "Use for causal questions: why something happened or what someone intended.",
    "What": "Use to describe content: objects, scenes, on-screen text, speech or appearance.",
    "How": "Use for questions about the manner, means or quality of an action.",
    "Count": "Use to count objects, people or events.",
    "Other": "Use for questions none of the other video tools fit, e.g. comparing positions.",
}
_INPUT_NOTE = (
    " Input: the video path and the sub-question joined by '#', "
    "e.g. ./videos/xxx.mp4#{example}"
)
_EXAMPLE_Q = {
    "When": "When does the dog walk past the sofa?",
    "Why": "Why did the lady shake the toy?",
    "What": "What's in the video?",
    "How": "How does the baby keep himself safe?",
    "Count": "How many people are in the room?",
    "Other": "Who slides farther at the end?",
}


def tool_name(kind: str) -> str:
    return f"Video{kind}"


@lru_cache(maxsize=None)
def load_examples(kind: str) -> str:
    if kind not in SUBTASK_KINDS:
        raise ValueError(f"unknown sub-task kind {kind!r}")
    return resources.files(__package__).joinpath("prompts", f"{kind.lower()}.txt").read_text(encoding="utf-8")


def extract_sql(text: str) -> str:
    m = _FENCE.search(text)
    if m:
        return m.group(1).strip()
    lines = text.strip().splitlines()
    for i, line in enumerate(lines):
        if _SQL_LINE.match(line):
            return _SQL_LINE.sub("", line).strip()
    return text.strip()


def _clean_answer(text: str) -> str:
    return re.sub(r"^\s*Answer\s*:\s*", "", text.strip(), flags=re.IGNORECASE)


def run_sql_agent(
    instructions: str,
    schema: str,
    question: str,
    execute: Callable[[str], ResultTable],
    backend: ChatBackend,
    attempts: int = SQL_ATTEMPTS,
) -> tuple[str, ResultTable | None]:
    """Generate SQL, run it, and phrase an answer from the rows.

    Returns ``(observation, result)``; ``result`` is None when every SQL attempt
    failed, in which case the observation starts with ``SUBTASK_FAILED:``.
    """
    system = (
        f"{instructions.strip()}\n\nDatabase schema:\n{schema}\n\n"
        "Reply with a single SQLite SELECT query on one line, prefixed with 'SQL:'."
    )
    turns: list[tuple[str, str]] = [("user", f"Question: {question}")]
    for attempt in range(attempts):
        reply = backend.complete(ChatRequest(system, tuple(turns))).text
        sql = extract_sql(reply)
        turns.append(("assistant", reply))
        try:
            result = execute(sql)
        except SqlError as exc:
            logger.info("sub-agent SQL attempt %d failed: %s", attempt + 1, exc.message)
            turns.append(("user", f"Error: {exc.message}\nWrite a corrected query."))
            continue
        turns.append((
            "user",
            f"Result:\n{result.to_text()}\n\nAnswer the question in one or two sentences using only this result.",
        ))
        answer = backend.complete(ChatRequest(system, tuple(turns))).text
        return _clean_answer(answer), result
    return FAILED_PREFIX + "sql_error_budget_exhausted", None


def run_subtask_tool(kind: str, memory: TaskMemory, sub_question: str, backend: ChatBackend,
                     attempts: int = SQL_ATTEMPTS) -> str:
    observation, _ = run_sql_agent(
        load_examples(kind),
        schema_description(memory),
        sub_question,
        lambda q: execute_sql(memory, q),
        backend,
        attempts,
    )
    return observation


def subtask_handler(kind: str):
    def handle(inv: ToolInvocation, ctx: ToolContext) -> str:
        return run_subtask_tool(kind, ctx.memory, inv.sub_question, ctx.backend)

    return handle


def default_subtask_tools() -> list[Tool]:
    tools = []
    for kind in SUBTASK_KINDS:
        desc = _DESCRIPTIONS[kind] + _INPUT_NOTE.format(example=_EXAMPLE_Q[kind])
        tools.append(Tool(ToolSpec(tool_name(kind), desc, "subtask"), subtask_handler(kind)))
    return tools
