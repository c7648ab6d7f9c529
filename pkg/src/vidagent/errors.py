"""Exception hierarchy shared across the package."""

from __future__ import annotations


class VidAgentError(Exception):
    """Base class for every error raised by this package."""


# memory

class MalformedRecord(VidAgentError):
    pass


class ParseFailure(VidAgentError):
    pass


class SqlError(VidAgentError):
    """A rejected or failed query; ``message`` carries the engine text."""

    def __init__(self, message: str, query: str = ""):
        super().__init__(message)
        self.message = message
        self.query = query


class SqlSyntaxError(SqlError):
    pass


class UnknownTable(SqlError):
    pass


class WriteAttempted(SqlError):
    pass


# backend

class BackendError(VidAgentError):
    pass


class TransportError(BackendError):
    pass


class ProviderError(BackendError):
    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned HTTP {status}: {body}")
        self.status = status
        self.body = body


class ScriptExhausted(BackendError):
    pass


class CassetteMiss(BackendError):
    def __init__(self, fingerprint: str):
        super().__init__(f"no cassette entry for request fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class CorruptCassette(BackendError):
    pass


class BackendConfigError(BackendError):
    pass


# toolkit

class ToolError(VidAgentError):
    pass


class UnknownTool(ToolError):
    def __init__(self, name: str):
        super().__init__(f"unknown tool {name!r}")
        self.name = name


class MissingSeparator(ToolError):
    pass


class SourceUnavailable(ToolError):
    pass


class EmbeddingBackendMissing(ToolError):
    pass


class ToolExecutionError(ToolError):
    """Raised by a tool handler when the call cannot produce an observation."""


# planner

class MissingPlaceholder(VidAgentError):
    pass


class SearchExhausted(VidAgentError):
    pass


class DuplicateAction(VidAgentError):
    pass


# aggregator

class NoVotes(VidAgentError):
    pass


class NoAnswers(VidAgentError):
    pass
