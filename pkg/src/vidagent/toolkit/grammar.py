"""The ``Action`` / ``Action Input`` command grammar."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import MissingSeparator, UnknownTool

SEPARATOR = "#"

_ACTION_PREFIX = re.compile(r"^\s*Action\s*:\s*")
_INPUT_PREFIX = re.compile(r"^\s*Action\s+Input\s*:\s*")


@dataclass(frozen=True)
class ToolInvocation:
    tool_name: str
    video_ref: str
    sub_question: str

    @property
    def input_text(self) -> str:
        if not self.sub_question:
            return self.video_ref
        return f"{self.video_ref}{SEPARATOR}{self.sub_question}"


def format_invocation(inv: ToolInvocation) -> tuple[str, str]:
    return f"Action: {inv.tool_name}", f"Action Input: {inv.input_text}"


def parse_invocation(action_line: str, input_line: str, registry) -> ToolInvocation:
    """Bind an action/input pair to a registered tool.

    The tool name is matched case-sensitively; the input is split at the first
    ``#`` into video reference and sub-question.
    """
    name = _ACTION_PREFIX.sub("", action_line, count=1).strip()
    if name not in registry:
        raise UnknownTool(name)
    spec = registry.spec(name)
    text = _INPUT_PREFIX.sub("", input_line, count=1).strip()
    video_ref, sep, question = text.partition(SEPARATOR)
    if spec.requires_separator and (not sep or not question.strip()):
        raise MissingSeparator(
            f"{name} expects '<video>{SEPARATOR}<question>' but got {text!r}"
        )
    return ToolInvocation(name, video_ref, question)
