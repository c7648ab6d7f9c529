"""Task-related symbolic memory: SQL tables built from perception records.

Records arrive as JSON Lines (one ``ExtractionRecord`` per line) produced by
upstream detectors, trackers, captioners, ASR and OCR. ``ingest`` turns them
into a space-dominant store (instances + trajectories) and/or a time-dominant
store (frames + deduplicated clips) inside an sqlite database.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import sqlite3
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .backend import ChatBackend, ChatRequest
from .errors import (
    MalformedRecord,
    ParseFailure,
    SqlError,
    SqlSyntaxError,
    UnknownTable,
    WriteAttempted,
)

logger = logging.getLogger(__name__)

KINDS = ("detection", "caption", "asr", "ocr", "action")
DEFAULT_TAU = 0.6

SPACE_TABLES = {
    "instances": (
        "instance_id INTEGER PRIMARY KEY, category TEXT, appearance TEXT, action TEXT, "
        "first_frame INTEGER, last_frame INTEGER"
    ),
    "trajectories": (
        "instance_id INTEGER, frame_index INTEGER, x1 REAL, y1 REAL, x2 REAL, y2 REAL, mask_ref TEXT NULL"
    ),
}
TIME_TABLES = {
    "frames": "frame_index INTEGER PRIMARY KEY, timestamp REAL, caption TEXT NULL, ocr_text TEXT NULL, asr_text TEXT NULL",
    "clips": "clip_id INTEGER PRIMARY KEY, start_frame INTEGER, end_frame INTEGER, caption TEXT",
}
_META_TABLE = "session_meta"

SPACE_DESCRIPTION = (
    "space-dominant: questions about specific targets (people, animals, objects) and their "
    "spatial relations; stores per-instance ID, category, trajectory, segmentation reference, "
    "appearance and action."
)
TIME_DESCRIPTION = (
    "time-dominant: questions about what happens over time across the whole video; stores "
    "timestamps, speech transcripts, on-screen text, frame captions and clip captions."
)


@dataclass(frozen=True)
class ExtractionRecord:
    kind: str
    frame_index: int
    timestamp: float
    payload: dict = field(default_factory=dict)

    _REQUIRED = {
        "detection": ("instance_id", "category", "box"),
        "caption": ("text",),
        "asr": ("text", "end_timestamp"),
        "ocr": ("text",),
        "action": ("instance_id", "label"),
    }

    @classmethod
    def from_dict(cls, obj: Any) -> "ExtractionRecord":
        if not isinstance(obj, dict):
            raise MalformedRecord(f"record must be an object, got {type(obj).__name__}")
        for key in ("kind", "frame_index", "timestamp", "payload"):
            if key not in obj:
                raise MalformedRecord(f"missing field {key!r}")
        kind = obj["kind"]
        if kind not in KINDS:
            raise MalformedRecord(f"unknown kind {kind!r}")
        frame, ts, payload = obj["frame_index"], obj["timestamp"], obj["payload"]
        if isinstance(frame, bool) or not isinstance(frame, int) or frame < 0:
            raise MalformedRecord(f"frame_index must be a non-negative integer, got {frame!r}")
        if isinstance(ts, bool) or not isinstance(ts, (int, float)) or ts < 0:
            raise MalformedRecord(f"timestamp must be a non-negative number, got {ts!r}")
        if not isinstance(payload, dict):
            raise MalformedRecord("payload must be an object")
        for key in cls._REQUIRED[kind]:
            if key not in payload:
                raise MalformedRecord(f"{kind} payload missing {key!r}")
        if "instance_id" in cls._REQUIRED[kind]:
            iid = payload["instance_id"]
            if isinstance(iid, bool) or not isinstance(iid, int) or iid < 0:
                raise MalformedRecord(f"instance_id must be a non-negative integer, got {iid!r}")
        if kind == "detection":
            box = payload["box"]
            if not isinstance(box, (list, tuple)) or len(box) != 4:
                raise MalformedRecord("box must have four coordinates")
            x1, y1, x2, y2 = (float(v) for v in box)
            if not (x1 < x2 and y1 < y2):
                raise MalformedRecord(f"degenerate box {list(box)}")
        return cls(kind=kind, frame_index=frame, timestamp=float(ts), payload=dict(payload))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "frame_index": self.frame_index, "timestamp": self.timestamp, "payload": self.payload}

    def sort_key(self) -> tuple:
        return (KINDS.index(self.kind), self.payload.get("instance_id", -1), self.frame_index)


@dataclass(frozen=True)
class MemoryTypeSelection:
    build_space: bool = True
    build_time: bool = True

    def __post_init__(self):
        if not (self.build_space or self.build_time):
            raise ValueError("at least one memory type must be selected")

    @classmethod
    def from_label(cls, label: str) -> "MemoryTypeSelection":
        label = label.strip().lower()
        if label in ("space", "space-dominant"):
            return cls(True, False)
        if label in ("time", "time-dominant"):
            return cls(False, True)
        if label == "both":
            return cls(True, True)
        raise ValueError(f"unknown memory type {label!r}")

    @property
    def label(self) -> str:
        if self.build_space and self.build_time:
            return "both"
        return "space-dominant" if self.build_space else "time-dominant"


@dataclass(frozen=True)
class ResultTable:
    column_names: tuple[str, ...]
    rows: tuple[tuple, ...]

    def __post_init__(self):
        width = len(self.column_names)
        for row in self.rows:
            if len(row) != width:
                raise ValueError("row arity does not match column arity")

    def to_text(self, max_rows: int = 50) -> str:
        lines = [" | ".join(self.column_names)]
        for row in self.rows[:max_rows]:
            lines.append(" | ".join("NULL" if v is None else str(v) for v in row))
        if len(self.rows) > max_rows:
            lines.append(f"... ({len(self.rows) - max_rows} more rows)")
        if not self.rows:
            lines.append("(no rows)")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# memory-type selection

_SELECTION_RE = re.compile(r"Action:\s*<?\s*(space-dominant|time-dominant|both)\s*>?\s+construction", re.IGNORECASE)

SELECTION_SYSTEM = (
    "You decide which symbolic memory must be built from a video before answering a question. "
    "Memory types:\n"
    f"- {SPACE_DESCRIPTION}\n"
    f"- {TIME_DESCRIPTION}\n"
    "- both: build the two memories when the question needs both views.\n"
    "Reply with exactly one line of the form\n"
    "Action: <space-dominant|time-dominant|both> construction"
)


def parse_memory_type(text: str) -> MemoryTypeSelection:
    m = _SELECTION_RE.search(text)
    if not m:
        raise ParseFailure(f"no 'Action: <type> construction' line in {text!r}")
    return MemoryTypeSelection.from_label(m.group(1))


def select_memory_type(question: str, backend: ChatBackend, retries: int = 2) -> MemoryTypeSelection:
    """Ask the LLM which memory to build; fall back to both on repeated parse failures."""
    if not question.strip():
        raise ValueError("question must be non-empty")
    turns: list[tuple[str, str]] = [("user", f"Question: {question}")]
    for attempt in range(retries + 1):
        response = backend.complete(ChatRequest(SELECTION_SYSTEM, tuple(turns)))
        try:
            return parse_memory_type(response.text)
        except ParseFailure as exc:
            logger.info("memory-type parse failure (attempt %d): %s", attempt + 1, exc)
            turns += [
                ("assistant", response.text),
                ("user", "Invalid format. Answer with one line: Action: <space-dominant|time-dominant|both> construction"),
            ]
    logger.warning("memory-type selection failed after %d attempts; building both memories", retries + 1)
    return MemoryTypeSelection(True, True)


# --------------------------------------------------------------------------
# clip deduplication

def _tokens(text: str) -> frozenset[str]:
    return frozenset(text.lower().split())


def jaccard(a: str, b: str) -> float:
    ta, tb = _tokens(a), _tokens(b)
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def deduplicate_clips(frame_captions: list[tuple[int, str]], tau: float = DEFAULT_TAU) -> list[tuple[int, int, str]]:
    """Greedily merge consecutive frame captions into clips.

    A frame joins the open clip when the token-set Jaccard similarity between
    its caption and the clip's first caption is at least ``tau``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    clips: list[tuple[int, int, str]] = []
    start = end = None
    rep = ""
    prev = None
    for frame, caption in frame_captions:
        if prev is not None and frame <= prev:
            raise ValueError("frame_captions must be sorted by frame index without duplicates")
        prev = frame
        if start is not None and jaccard(caption, rep) >= tau:
            end = frame
            continue
        if start is not None:
            clips.append((start, end, rep))
        start = end = frame
        rep = caption
    if start is not None:
        clips.append((start, end, rep))
    return clips


# --------------------------------------------------------------------------
# the store

class TaskMemory:
    """An sqlite-backed memory for one (video, question) session.

    Treat as read-only after ``ingest``; ``execute_sql`` enforces it.
    """

    def __init__(self, video_id: str, selection: MemoryTypeSelection, tau: float = DEFAULT_TAU,
                 conn: sqlite3.Connection | None = None):
        self.video_id = video_id
        self.selection = selection
        self.tau = tau
        self.rejected = 0
        self._lock = threading.Lock()
        if conn is None:
            conn = sqlite3.connect(":memory:", check_same_thread=False)
            self._create_tables(conn)
        self._conn = conn

    @property
    def table_names(self) -> list[str]:
        names = []
        if self.selection.build_space:
            names += list(SPACE_TABLES)
        if self.selection.build_time:
            names += list(TIME_TABLES)
        return names

    def _create_tables(self, conn: sqlite3.Connection) -> None:
        tables = {}
        if self.selection.build_space:
            tables.update(SPACE_TABLES)
        if self.selection.build_time:
            tables.update(TIME_TABLES)
        for name, cols in tables.items():
            conn.execute(f"CREATE TABLE {name} ({cols})")
        conn.execute(f"CREATE TABLE {_META_TABLE} (key TEXT PRIMARY KEY, value TEXT)")
        conn.executemany(
            f"INSERT INTO {_META_TABLE} VALUES (?, ?)",
            [("video_id", self.video_id), ("selection", self.selection.label), ("tau", repr(self.tau))],
        )
        conn.commit()

    def row_counts(self) -> dict[str, int]:
        with self._lock:
            return {t: self._conn.execute(f"SELECT COUNT(*) FROM {t}").fetchone()[0] for t in self.table_names}

    def dump(self) -> dict[str, list[tuple]]:
        with self._lock:
            return {t: self._conn.execute(f"SELECT * FROM {t} ORDER BY rowid").fetchall() for t in self.table_names}

    def digest(self) -> str:
        """Content hash over every table, used to check read-only access."""
        return hashlib.sha256(repr(sorted(self.dump().items())).encode()).hexdigest()

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        if path.exists():
            path.unlink()
        dest = sqlite3.connect(path)
        with self._lock:
            self._conn.backup(dest)
        dest.close()

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TaskMemory":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        src = sqlite3.connect(path)
        conn = sqlite3.connect(":memory:", check_same_thread=False)
        src.backup(conn)
        src.close()
        meta = dict(conn.execute(f"SELECT key, value FROM {_META_TABLE}").fetchall())
        selection = MemoryTypeSelection.from_label(meta["selection"])
        return cls(meta["video_id"], selection, float(meta["tau"]), conn=conn)

    def query(self, sql: str) -> ResultTable:
        return execute_sql(self, sql)


def read_records(path: str | os.PathLike) -> Iterator[dict | None]:
    """Yield the decoded objects of a JSON Lines file (``None`` for undecodable lines)."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except ValueError:
                logger.warning("%s:%d: invalid JSON, record skipped", path, lineno)
                yield None


def _join(existing: str | None, new: str) -> str:
    if not existing:
        return new
    return f"{existing} {new}"


def ingest(records: Iterable[ExtractionRecord | dict | None], selection: MemoryTypeSelection,
           tau: float = DEFAULT_TAU, video_id: str = "video") -> TaskMemory:
    """Build a memory from a stream of records. Malformed records are logged and skipped."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    memory = TaskMemory(video_id, selection, tau)
    good: list[ExtractionRecord] = []
    for raw in records:
        try:
            if raw is None:
                raise MalformedRecord("undecodable line")
            rec = raw if isinstance(raw, ExtractionRecord) else ExtractionRecord.from_dict(raw)
        except (MalformedRecord, ValueError, TypeError) as exc:
            memory.rejected += 1
            logger.warning("rejected record: %s", exc)
            continue
        good.append(rec)
    good.sort(key=ExtractionRecord.sort_key)

    conn = memory._conn
    if selection.build_space:
        _ingest_space(conn, good)
    if selection.build_time:
        _ingest_time(conn, good, tau)
    conn.commit()
    return memory


def _ingest_space(conn: sqlite3.Connection, records: list[ExtractionRecord]) -> None:
    instances: dict[int, dict] = {}
    trajectories = []
    for rec in records:
        if rec.kind == "detection":
            p = rec.payload
            iid = p["instance_id"]
            inst = instances.setdefault(iid, {"category": None, "appearance": None, "actions": [], "frames": []})
            if inst["category"] is None:
                inst["category"] = str(p["category"])
            if inst["appearance"] is None and p.get("appearance"):
                inst["appearance"] = str(p["appearance"])
            inst["frames"].append(rec.frame_index)
            x1, y1, x2, y2 = (float(v) for v in p["box"])
            trajectories.append((iid, rec.frame_index, x1, y1, x2, y2, p.get("mask_ref")))
    for rec in records:
        if rec.kind == "action":
            iid = rec.payload["instance_id"]
            inst = instances.setdefault(iid, {"category": None, "appearance": None, "actions": [], "frames": []})
            label = str(rec.payload["label"])
            if label not in inst["actions"]:
                inst["actions"].append(label)
            inst.setdefault("action_frames", []).append(rec.frame_index)
    rows = []
    for iid in sorted(instances):
        inst = instances[iid]
        frames = inst["frames"] or inst.get("action_frames", [])
        rows.append((
            iid,
            inst["category"],
            inst["appearance"],
            "; ".join(inst["actions"]) or None,
            min(frames) if frames else None,
            max(frames) if frames else None,
        ))
    conn.executemany("INSERT INTO instances VALUES (?, ?, ?, ?, ?, ?)", rows)
    conn.executemany("INSERT INTO trajectories VALUES (?, ?, ?, ?, ?, ?, ?)", trajectories)


def _ingest_time(conn: sqlite3.Connection, records: list[ExtractionRecord], tau: float) -> None:
    frames: dict[int, dict] = {}
    column = {"caption": "caption", "ocr": "ocr_text", "asr": "asr_text"}
    for rec in records:
        if rec.kind not in column:
            continue
        row = frames.setdefault(rec.frame_index, {"timestamp": rec.timestamp})
        row["timestamp"] = min(row["timestamp"], rec.timestamp)
        col = column[rec.kind]
        row[col] = _join(row.get(col), str(rec.payload["text"]))
    conn.executemany(
        "INSERT INTO frames VALUES (?, ?, ?, ?, ?)",
        [(f, r["timestamp"], r.get("caption"), r.get("ocr_text"), r.get("asr_text")) for f, r in sorted(frames.items())],
    )
    captioned = [(f, r["caption"]) for f, r in sorted(frames.items()) if r.get("caption") is not None]
    clips = deduplicate_clips(captioned, tau)
    conn.executemany("INSERT INTO clips VALUES (?, ?, ?, ?)", [(i, s, e, c) for i, (s, e, c) in enumerate(clips)])


def ingest_file(path: str | os.PathLike, selection: MemoryTypeSelection, tau: float = DEFAULT_TAU,
                video_id: str | None = None) -> TaskMemory:
    return ingest(read_records(path), selection, tau, video_id or Path(path).stem)


# --------------------------------------------------------------------------
# querying

# sqlite authorizer action codes that a read-only SELECT may trigger
_READ_ACTIONS = {sqlite3.SQLITE_SELECT, sqlite3.SQLITE_READ, sqlite3.SQLITE_FUNCTION}
_WRITE_WORDS = re.compile(
    r"^\s*(insert|update|delete|drop|create|alter|replace|attach|detach|pragma|vacuum|reindex|begin|commit|rollback|savepoint|release|analyze)\b",
    re.IGNORECASE,
)


def _allow_all(*args) -> int:
    # set_authorizer(None) only clears the hook from Python 3.11 on
    return sqlite3.SQLITE_OK


def _strip_sql(query: str) -> str:
    q = query.strip()
    while q.endswith(";"):
        q = q[:-1].rstrip()
    return q


def execute_sql(memory: TaskMemory, query: str) -> ResultTable:
    """Run one read-only SELECT against ``memory``."""
    q = _strip_sql(query)
    if _WRITE_WORDS.match(q):
        raise WriteAttempted(f"only SELECT queries are allowed: {q.split()[0].upper()}", query)
    if not re.match(r"^\s*(select|with)\b", q, re.IGNORECASE):
        raise SqlSyntaxError(f"expected a SELECT query near {q[:20]!r}", query)
    if ";" in q and sqlite3.complete_statement(q.split(";")[0] + ";") and q.split(";", 1)[1].strip():
        raise SqlSyntaxError("only one statement may be executed", query)

    def authorizer(action, arg1, arg2, dbname, source):
        if action in _READ_ACTIONS:
            if action == sqlite3.SQLITE_READ and arg1 == _META_TABLE:
                return sqlite3.SQLITE_DENY
            return sqlite3.SQLITE_OK
        return sqlite3.SQLITE_DENY

    with memory._lock:
        conn = memory._conn
        conn.set_authorizer(authorizer)
        try:
            cur = conn.execute(q)
            rows = cur.fetchall()
            names = tuple(d[0] for d in cur.description or ())
        except sqlite3.DatabaseError as exc:
            msg = str(exc)
            if msg.startswith("no such table"):
                raise UnknownTable(msg, query) from exc
            if _META_TABLE in msg:
                raise UnknownTable(f"no such table: {_META_TABLE}", query) from exc
            if "not authorized" in msg or "prohibited" in msg:
                raise WriteAttempted(msg, query) from exc
            raise SqlSyntaxError(msg, query) from exc
        except (sqlite3.Warning, sqlite3.ProgrammingError) as exc:
            raise SqlSyntaxError(str(exc), query) from exc
        finally:
            conn.set_authorizer(_allow_all)
    return ResultTable(names, tuple(tuple(r) for r in rows))


def schema_description(memory: TaskMemory) -> str:
    """Deterministic listing of tables, columns and one sample row each."""
    tables = dict(SPACE_TABLES, **TIME_TABLES)
    lines = []
    with memory._lock:
        for name in memory.table_names:
            lines.append(f"{name}({tables[name]})")
            row = memory._conn.execute(f"SELECT * FROM {name} ORDER BY rowid LIMIT 1").fetchone()
            if row is None:
                lines.append("  (empty)")
            else:
                lines.append("  sample: (" + ", ".join("NULL" if v is None else repr(v) for v in row) + ")")
    return "\n".join(lines)


__all__ = [
    "ExtractionRecord",
    "MemoryTypeSelection",
    "ResultTable",
    "TaskMemory",
    "SqlError",
    "deduplicate_clips",
    "execute_sql",
    "ingest",
    "ingest_file",
    "jaccard",
    "read_records",
    "schema_description",
    "select_memory_type",
]
