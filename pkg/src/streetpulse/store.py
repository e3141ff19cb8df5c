"""Durable append-only event log with periodic snapshots.

Every record is one JSON line, flushed and fsynced before the append call
returns, so an acknowledged write survives a hard process kill. Recovery
replays the log; a torn final line (crash mid-write) is detected and
dropped. Snapshots store derived state plus the log offset it covers, so
long logs do not need a full replay.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator

LOG_NAME = "events.log"
SNAPSHOT_NAME = "snapshot.json"


class EventLog:
    def __init__(self, directory: str | Path, fsync: bool = True) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / LOG_NAME
        self._fsync = fsync
        self._lock = threading.Lock()
        self._fh = open(self.path, "ab")

    def append(self, record: dict[str, Any]) -> int:
        """Durably append one record; returns the log offset after the write."""
        line = json.dumps(record, separators=(",", ":"), sort_keys=True) + "\n"
        data = line.encode("utf-8")
        with self._lock:
            self._fh.write(data)
            self._fh.flush()
            if self._fsync:
                os.fsync(self._fh.fileno())
            return self._fh.tell()

    def replay(self, from_offset: int = 0) -> Iterator[dict[str, Any]]:
        """Yield records from ``from_offset``; ignores a torn final line."""
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            fh.seek(from_offset)
            for raw in fh:
                if not raw.endswith(b"\n"):
                    break  # torn tail from a crash mid-append
                try:
                    yield json.loads(raw)
                except json.JSONDecodeError:
                    break

    @property
    def offset(self) -> int:
        with self._lock:
            return self._fh.tell()

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    # snapshots ----------------------------------------------------------

    @property
    def snapshot_path(self) -> Path:
        return self.directory / SNAPSHOT_NAME

    def write_snapshot(self, state: dict[str, Any], log_offset: int) -> None:
        """Atomically persist derived state covering the log up to ``log_offset``."""
        payload = json.dumps({"log_offset": log_offset, "state": state}, sort_keys=True)
        tmp = self.snapshot_path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.snapshot_path)

    def read_snapshot(self) -> tuple[dict[str, Any] | None, int]:
        """Return (state, covered_offset); (None, 0) when absent or unreadable."""
        try:
            with open(self.snapshot_path) as fh:
                payload = json.load(fh)
            return payload["state"], int(payload["log_offset"])
        except (OSError, json.JSONDecodeError, KeyError, ValueError):
            return None, 0
