"""Tool registry, command grammar, sub-task SQL agents and knowledge tools."""

from .grammar import ToolInvocation, format_invocation, parse_invocation
from .knowledge import KnowledgeSource, TokenCountEmbedder, retrieve, run_knowledge_tool
from .registry import (
    Tool,
    ToolContext,
    ToolRegistry,
    ToolSpec,
    command_handler,
    load_registry,
    registry_descriptions,
    tool_names,
)
from .subtask import SUBTASK_KINDS, default_subtask_tools, run_subtask_tool


def default_registry() -> ToolRegistry:
    """The six sub-task tools, in When/Why/What/How/Count/Other order."""
    return ToolRegistry(default_subtask_tools())


__all__ = [
    "KnowledgeSource",
    "SUBTASK_KINDS",
    "TokenCountEmbedder",
    "Tool",
    "ToolContext",
    "ToolInvocation",
    "ToolRegistry",
    "ToolSpec",
    "command_handler",
    "default_registry",
    "default_subtask_tools",
    "format_invocation",
    "load_registry",
    "parse_invocation",
    "registry_descriptions",
    "retrieve",
    "run_knowledge_tool",
    "run_subtask_tool",
    "tool_names",
]
