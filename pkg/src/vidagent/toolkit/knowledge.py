"""Knowledge tools: symbolic tables, textual corpora and web search."""

from __future__ import annotations

import csv
import logging
import re
import sqlite3
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence
from urllib.parse import quote_plus

import httpx
import numpy as np

from ..backend import ChatBackend, ChatRequest
from ..errors import (
    EmbeddingBackendMissing,
    SourceUnavailable,
    SqlSyntaxError,
    UnknownTable,
    WriteAttempted,
)
from ..memory import ResultTable, _allow_all
from .grammar import ToolInvocation
from .registry import ToolContext
from .subtask import run_sql_agent

logger = logging.getLogger(__name__)

SOURCE_KINDS = ("symbolic", "textual", "web")
CHUNK_TOKENS = 256
TOP_K = 4
NO_RESULTS = "no results found"


class Embedder(Protocol):
    def __call__(self, texts: Sequence[str]) -> np.ndarray: ...


def _tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.lower())


class TokenCountEmbedder:
    """Offline embedding: raw token-count vectors over the batch vocabulary.

    Query and candidates must be embedded in one call so that they share the
    vocabulary.
    """

    def __call__(self, texts: Sequence[str]) -> np.ndarray:
        counts = [Counter(_tokenize(t)) for t in texts]
        vocab = sorted(set().union(*counts)) if counts else []
        index = {w: i for i, w in enumerate(vocab)}
        out = np.zeros((len(texts), len(vocab)))
        for row, c in enumerate(counts):
            for w, n in c.items():
                out[row, index[w]] = n
        return out


def chunk_text(text: str, size: int = CHUNK_TOKENS) -> list[str]:
    words = text.split()
    return [" ".join(words[i:i + size]) for i in range(0, len(words), size)]


def cosine_scores(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(query)
    mn = np.linalg.norm(matrix, axis=1)
    denom = qn * mn
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = matrix @ query / denom
    return np.where(denom > 0, scores, 0.0)


def retrieve(chunks: Sequence[str], question: str, embed: Embedder, k: int = TOP_K) -> list[tuple[int, float]]:
    """Top-k chunks by cosine similarity; ties go to the lower chunk index."""
    if not chunks:
        return []
    vectors = np.asarray(embed(list(chunks) + [question]), dtype=float)
    scores = cosine_scores(vectors[-1], vectors[:-1])
    order = np.argsort(-scores, kind="stable")[:k]
    return [(int(i), float(scores[i])) for i in order]


@dataclass
class KnowledgeSource:
    kind: str
    locator: str
    description: str = ""
    embedder: Optional[Embedder] = None
    top_k: int = TOP_K
    chunk_size: int = CHUNK_TOKENS
    http_client: Optional[httpx.Client] = None
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown knowledge source kind {self.kind!r}")

    # symbolic ---------------------------------------------------------------
    def _connection(self) -> sqlite3.Connection:
        with self._lock:
            if "conn" not in self._cache:
                self._cache["conn"] = _load_tables(Path(self.locator))
            return self._cache["conn"]

    # textual ----------------------------------------------------------------
    def chunks(self) -> list[str]:
        with self._lock:
            if "chunks" not in self._cache:
                path = Path(self.locator)
                if path.is_dir():
                    files = sorted(p for p in path.iterdir() if p.suffix in (".txt", ".md"))
                elif path.is_file():
                    files = [path]
                else:
                    raise SourceUnavailable(f"document corpus {self.locator} not found")
                chunks = []
                for f in files:
                    chunks += chunk_text(f.read_text(encoding="utf-8"), self.chunk_size)
                self._cache["chunks"] = chunks
            return self._cache["chunks"]


def _table_name(path: Path) -> str:
    name = re.sub(r"\W", "_", path.stem)
    return name if not name[:1].isdigit() else f"t_{name}"


def _load_tables(path: Path) -> sqlite3.Connection:
    if not path.exists():
        raise SourceUnavailable(f"table source {path} not found")
    conn = sqlite3.connect(":memory:", check_same_thread=False)
    if path.suffix.lower() in (".db", ".sqlite", ".sqlite3"):
        src = sqlite3.connect(path)
        src.backup(conn)
        src.close()
        return conn
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    for f in files:
        with f.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header:
                continue
            rows = [[_coerce(v) for v in r] for r in reader]
        name = _table_name(f)
        cols = ", ".join(f'"{h}"' for h in header)
        conn.execute(f'CREATE TABLE "{name}" ({cols})')
        conn.executemany(f'INSERT INTO "{name}" VALUES ({", ".join("?" * len(header))})', rows)
    conn.commit()
    return conn


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _table_schema(conn: sqlite3.Connection) -> str:
    lines = []
    for (name,) in conn.execute("SELECT name FROM sqlite_master WHERE type='table' ORDER BY name"):
        cols = [r[1] for r in conn.execute(f'PRAGMA table_info("{name}")')]
        lines.append(f"{name}({', '.join(cols)})")
        row = conn.execute(f'SELECT * FROM "{name}" LIMIT 1').fetchone()
        lines.append("  (empty)" if row is None else f"  sample: {tuple(row)!r}")
    return "\n".join(lines)


def _readonly_query(conn: sqlite3.Connection, lock: threading.Lock, query: str) -> ResultTable:
    q = query.strip().rstrip(";")
    if not re.match(r"^\s*(select|with)\b", q, re.IGNORECASE):
        raise WriteAttempted("only SELECT queries are allowed", query)

    def authorizer(action, *args):
        allowed = (sqlite3.SQLITE_SELECT, sqlite3.SQLITE_READ, sqlite3.SQLITE_FUNCTION)
        return sqlite3.SQLITE_OK if action in allowed else sqlite3.SQLITE_DENY

    with lock:
        conn.set_authorizer(authorizer)
        try:
            cur = conn.execute(q)
            rows = cur.fetchall()
        except sqlite3.DatabaseError as exc:
            msg = str(exc)
            if msg.startswith("no such table"):
                raise UnknownTable(msg, query) from exc
            raise SqlSyntaxError(msg, query) from exc
        except (sqlite3.Warning, sqlite3.ProgrammingError) as exc:
            raise SqlSyntaxError(str(exc), query) from exc
        finally:
            conn.set_authorizer(_allow_all)
    return ResultTable(tuple(d[0] for d in cur.description or ()), tuple(tuple(r) for r in rows))


SYMBOLIC_INSTRUCTIONS = (
    "You answer questions from an external knowledge table by writing SQL against it."
)


def _symbolic(source: KnowledgeSource, question: str, backend: ChatBackend) -> str:
    conn = source._connection()
    answer, result = run_sql_agent(
        f"{SYMBOLIC_INSTRUCTIONS}\nSource: {source.description}",
        _table_schema(conn),
        question,
        lambda q: _readonly_query(conn, source._lock, q),
        backend,
    )
    if result is None:
        return answer
    return f"{answer}\nRows used:\n{result.to_text(max_rows=10)}"


def _textual(source: KnowledgeSource, question: str, backend: ChatBackend) -> str:
    if source.embedder is None:
        raise EmbeddingBackendMissing(f"textual source {source.locator} has no embedding function")
    chunks = source.chunks()
    hits = retrieve(chunks, question, source.embedder, source.top_k)
    if not hits:
        return NO_RESULTS
    context = "\n\n".join(f"[{i}] {chunks[i]}" for i, _ in hits)
    request = ChatRequest.single(
        "Answer the question using only the numbered passages. Cite passage numbers.",
        f"Passages:\n{context}\n\nQuestion: {question}",
    )
    return backend.complete(request).text.strip()


def _web(source: KnowledgeSource, question: str, backend: ChatBackend) -> str:
    url = source.locator.replace("{query}", quote_plus(question))
    client = source.http_client or httpx.Client(timeout=30.0)
    try:
        resp = client.get(url)
        resp.raise_for_status()
        data = resp.json()
    except (httpx.HTTPError, ValueError) as exc:
        raise SourceUnavailable(f"web search failed: {exc}") from exc
    results = data.get("results", []) if isinstance(data, dict) else data
    if not results:
        return NO_RESULTS
    snippets = []
    for i, r in enumerate(results[:8]):
        if isinstance(r, dict):
            snippets.append(f"[{i}] {r.get('title', '')}: {r.get('snippet', '')}".strip())
        else:
            snippets.append(f"[{i}] {r}")
    request = ChatRequest.single(
        "Summarize what these search results say about the question in two or three sentences.",
        "Results:\n" + "\n".join(snippets) + f"\n\nQuestion: {question}",
    )
    return backend.complete(request).text.strip()


_RUNNERS: dict[str, Callable[[KnowledgeSource, str, ChatBackend], str]] = {
    "symbolic": _symbolic,
    "textual": _textual,
    "web": _web,
}


def run_knowledge_tool(source: KnowledgeSource, question: str, backend: ChatBackend) -> str:
    """Query a knowledge source. Source problems come back as observation text."""
    try:
        return _RUNNERS[source.kind](source, question, backend)
    except (SourceUnavailable, EmbeddingBackendMissing) as exc:
        return f"KNOWLEDGE_UNAVAILABLE: {type(exc).__name__}: {exc}"


def knowledge_handler(source: KnowledgeSource):
    def handle(inv: ToolInvocation, ctx: ToolContext) -> str:
        return run_knowledge_tool(source, inv.sub_question, ctx.backend)

    return handle


__all__ = [
    "KnowledgeSource",
    "TokenCountEmbedder",
    "chunk_text",
    "cosine_scores",
    "knowledge_handler",
    "retrieve",
    "run_knowledge_tool",
]
