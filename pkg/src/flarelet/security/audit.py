"""Tamper-evident audit log: hash-chained JSON lines, append-only."""

from __future__ import annotations

import hashlib
import json
import threading
import time
from pathlib import Path
from typing import Optional


def _record_hash(prev_hash: str, record: dict) -> str:
    body = json.dumps({k: v for k, v in record.items() if k != "chain"},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256((prev_hash + body).encode("utf-8")).hexdigest()


class AuditLog:
    """Single-writer append log; reads are safe at any time."""

    GENESIS = "0" * 64

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._seq = 0
        self._last_hash = self.GENESIS
        if self.path.exists():
            for record in self.records():
                self._seq = record["seq"] + 1
                self._last_hash = record["chain"]

    def append(self, actor: str, action: str, ref: str = "",
               outcome: str = "ok", detail: str = "") -> dict:
        with self._lock:
            record = {
                "seq": self._seq,
                "ts": time.time(),
                "actor": actor,
                "action": action,
                "ref": ref,
                "outcome": outcome,
            }
            if detail:
                record["detail"] = detail
            record["chain"] = _record_hash(self._last_hash, record)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._seq += 1
            self._last_hash = record["chain"]
            return record

    def records(self) -> list:
        if not self.path.exists():
            return []
        out = []
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def verify(self) -> Optional[int]:
        """None when the chain is intact, else the seq of the first bad record."""
        prev = self.GENESIS
        for expected_seq, record in enumerate(self.records()):
            if record.get("seq") != expected_seq:
                return expected_seq
            if record.get("chain") != _record_hash(prev, record):
                return expected_seq
            prev = record["chain"]
        return None

    def count(self, action: Optional[str] = None) -> int:
        records = self.records()
        if action is None:
            return len(records)
        return sum(1 for r in records if r.get("action") == action)
