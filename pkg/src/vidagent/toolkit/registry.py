"""Tool specs, the registry, and loading a registry from a JSON config file."""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

from ..errors import ToolExecutionError
from .grammar import ToolInvocation

logger = logging.getLogger(__name__)

KINDS = ("subtask", "knowledge", "utility")


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    kind: str = "subtask"

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError(f"tool name must be non-empty without whitespace: {self.name!r}")
        if not self.description.strip():
            raise ValueError(f"tool {self.name} needs a description")
        if self.kind not in KINDS:
            raise ValueError(f"unknown tool kind {self.kind!r}")

    @property
    def requires_separator(self) -> bool:
        return self.kind in ("subtask", "knowledge")


@dataclass
class ToolContext:
    """Per-session state a handler may use."""

    memory: object = None
    backend: object = None


Handler = Callable[[ToolInvocation, ToolContext], str]


@dataclass(frozen=True)
class Tool:
    spec: ToolSpec
    handler: Handler


class ToolRegistry:
    """Ordered, name-unique collection of tools. Treat as immutable once built."""

    def __init__(self, tools: Optional[list[Tool]] = None):
        self._tools: dict[str, Tool] = {}
        for tool in tools or ():
            self.register(tool.spec, tool.handler)

    def register(self, spec: ToolSpec, handler: Handler) -> None:
        if spec.name in self._tools:
            raise ValueError(f"duplicate tool name {spec.name!r}")
        self._tools[spec.name] = Tool(spec, handler)

    def __contains__(self, name: object) -> bool:
        return name in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self) -> Iterator[Tool]:
        return iter(self._tools.values())

    def spec(self, name: str) -> ToolSpec:
        return self._tools[name].spec

    def handler(self, name: str) -> Handler:
        return self._tools[name].handler

    @property
    def names(self) -> list[str]:
        return list(self._tools)

    def invoke(self, inv: ToolInvocation, ctx: ToolContext) -> str:
        return self._tools[inv.tool_name].handler(inv, ctx)


def registry_descriptions(registry: ToolRegistry) -> str:
    if not len(registry):
        logger.warning("tool registry is empty; the planner has nothing to call")
        return ""
    return "\n".join(f"{t.spec.name}: {t.spec.description}" for t in registry)


def tool_names(registry: ToolRegistry) -> str:
    return ", ".join(registry.names)


def command_handler(template: list[str] | str, timeout: float = 300.0) -> Handler:
    """Handler that runs an external program.

    ``{video_ref}`` and ``{sub_question}`` in the template are substituted per
    call; stdout becomes the observation.
    """
    argv = shlex.split(template) if isinstance(template, str) else list(template)

    def run(inv: ToolInvocation, ctx: ToolContext) -> str:
        args = [a.replace("{video_ref}", inv.video_ref).replace("{sub_question}", inv.sub_question) for a in argv]
        try:
            proc = subprocess.run(args, capture_output=True, text=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ToolExecutionError(f"{inv.tool_name}: {exc}") from exc
        if proc.returncode != 0:
            raise ToolExecutionError(f"{inv.tool_name} exited with {proc.returncode}: {proc.stderr.strip()}")
        return proc.stdout.strip()

    return run


def load_registry(path: str | os.PathLike) -> ToolRegistry:
    """Build a registry from a JSON config.

    Layout::

        {"subtask_tools": true,
         "tools": [
            {"name": "Manual", "kind": "knowledge", "description": "...",
             "source": {"kind": "textual", "locator": "docs/manual.txt",
                        "embedder": "token-count"}},
            {"name": "Inpaint", "kind": "utility", "description": "...",
             "command": ["python", "inpaint.py", "{video_ref}", "{sub_question}"]}]}

    Relative locators are resolved against the config file's directory.
    """
    from .knowledge import KnowledgeSource, TokenCountEmbedder, knowledge_handler
    from .subtask import default_subtask_tools

    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        config = json.load(fh)
    base = path.parent
    registry = ToolRegistry()
    if config.get("subtask_tools", True):
        for tool in default_subtask_tools():
            registry.register(tool.spec, tool.handler)
    for entry in config.get("tools", []):
        spec = ToolSpec(entry["name"], entry["description"], entry.get("kind", "knowledge"))
        if spec.kind == "knowledge":
            src = dict(entry["source"])
            locator = src["locator"]
            if src["kind"] != "web" and not os.path.isabs(locator):
                locator = str(base / locator)
            embedder = TokenCountEmbedder() if src.get("embedder") == "token-count" else None
            source = KnowledgeSource(src["kind"], locator, src.get("description", spec.description),
                                     embedder=embedder, top_k=int(src.get("top_k", 4)),
                                     chunk_size=int(src.get("chunk_size", 256)))
            registry.register(spec, knowledge_handler(source))
        elif spec.kind == "utility":
            registry.register(spec, command_handler(entry["command"], float(entry.get("timeout", 300))))
        else:
            raise ValueError(f"config may only add knowledge or utility tools, got {spec.kind!r} for {spec.name}")
    return registry
