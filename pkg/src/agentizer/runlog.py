"""Append-only, line-delimited run log."""

from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

EVENTS = frozenset(
    {"created", "started", "done", "failed", "deferred", "retried", "gate", "usage"}
)


def utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


class RunLog:
    """Thread-safe JSONL event log.

    When ``path`` is None the log is memory-only (handy in unit tests); the
    in-memory list is kept in both modes so audits do not need to re-read
    the file.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self.records: list[dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                self.records.extend(read_log(self.path))

    def append(self, node_id: str, event: str, detail: Any = None) -> dict[str, Any]:
        if event not in EVENTS:
            raise ValueError(f"unknown run-log event {event!r}")
        record = {
            "timestamp": utcnow(),
            "node-id": node_id,
            "event": event,
            "detail": detail if detail is not None else {},
        }
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        return record

    def events(self, event: str | None = None) -> list[dict[str, Any]]:
        with self._lock:
            snapshot = list(self.records)
        if event is None:
            return snapshot
        return [r for r in snapshot if r["event"] == event]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.events())


def read_log(path: str | Path) -> list[dict[str, Any]]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
