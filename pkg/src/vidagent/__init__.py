"""Video question answering with a task-related symbolic memory, SQL sub-task
tools and a reward-guided tree-search planner."""

from .aggregator import aggregate, summarize, vote
from .backend import (
    ChatRequest,
    ChatResponse,
    FunctionBackend,
    OpenAIChatBackend,
    RecordReplayBackend,
    ScriptedBackend,
)
from .memory import MemoryTypeSelection, TaskMemory, execute_sql, ingest, ingest_file, select_memory_type
from .planner import Limits, RewardConfig, run
from .toolkit import ToolRegistry, default_registry

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "FunctionBackend",
    "Limits",
    "MemoryTypeSelection",
    "OpenAIChatBackend",
    "RecordReplayBackend",
    "RewardConfig",
    "ScriptedBackend",
    "TaskMemory",
    "ToolRegistry",
    "aggregate",
    "default_registry",
    "execute_sql",
    "ingest",
    "ingest_file",
    "run",
    "select_memory_type",
    "summarize",
    "vote",
]
