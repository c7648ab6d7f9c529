"""Planner prompt template with named ``{placeholder}`` slots."""

from __future__ import annotations

import re
from typing import Mapping

from ..errors import MissingPlaceholder

PLACEHOLDERS = (
    "video_filename",
    "input_question",
    "tool_names",
    "tool_descriptions",
    "agent_scratchpad",
    "ancestor_history",
    "expansion_prompt",
)

PLANNER_SYSTEM = "You are a video question-answering agent that solves tasks by calling tools step by step."

PLANNER_TEMPLATE = """\
You are working on the video at {video_filename}. Answer the question about it as well as you can.
The video has already been converted into a symbolic memory that the tools below can query.

Tools:
{tool_descriptions}

Use this format:

Question: the question you must answer
Thought: reason about what to do next
Action: the tool to use, exactly one of [{tool_names}]
Action Input: the tool input, written as <video path>#<sub-question>
Observation: the tool result
... (Thought/Action/Action Input/Observation may repeat)
Thought: I now know the final answer
Final Answer: the final answer to the original question

Write at most one Thought/Action/Action Input block at a time and stop; the Observation is supplied to you.

Question: {input_question}
{ancestor_history}{expansion_prompt}{agent_scratchpad}"""

EXPANSION_HEADER = "Candidate next steps that were already explored from this point:"
EXPANSION_FOOTER = (
    "Choose a next step that differs from every candidate above, either a different tool "
    "or a different sub-question.\n"
)

_SLOT = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")


def render_planner_prompt(ctx: Mapping[str, str], template: str = PLANNER_TEMPLATE) -> str:
    """Substitute every placeholder of ``template`` from ``ctx`` in a single pass.

    Values are inserted verbatim, so braces inside them (SQL, JSON) are safe.
    """
    missing = [name for name in PLACEHOLDERS if name in set(_SLOT.findall(template)) and name not in ctx]
    if missing:
        raise MissingPlaceholder(f"missing placeholder value(s): {', '.join(missing)}")
    return _SLOT.sub(lambda m: str(ctx[m.group(1)]), template)


def expansion_prompt(tried: list[tuple[str, str, str]]) -> str:
    """Expansion instruction listing the (thought, action, action input) of existing children."""
    if not tried:
        return ""
    lines = [EXPANSION_HEADER]
    for i, (thought, action, action_input) in enumerate(tried, 1):
        lines.append(f"{i}. Thought: {thought} | Action: {action} | Action Input: {action_input}")
    return "\n".join(lines) + "\n" + EXPANSION_FOOTER
