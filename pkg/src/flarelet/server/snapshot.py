"""Snapshot store: atomic, integrity-checked controller state per job.

Files are named {job_id}.{seq}.snap and written via temp-then-rename so a
reader never sees a torn snapshot.  Both servers of an HA pair point at the
same directory.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from pathlib import Path
from typing import Optional


class SnapshotStore:
    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def save(self, job_id: str, seq: int, state: dict) -> Path:
        body = json.dumps(state, sort_keys=True)
        doc = {"job_id": job_id, "seq": seq, "state": state,
               "digest": hashlib.sha256(body.encode()).hexdigest()}
        path = self.dir / f"{job_id}.{seq}.snap"
        tmp = self.dir / f".{job_id}.{seq}.tmp"
        tmp.write_text(json.dumps(doc))
        os.replace(tmp, path)
        return path

    def load_latest(self, job_id: str) -> Optional[tuple]:
        """(seq, state) of the newest intact snapshot, else None."""
        best = None
        for path in self.dir.glob(f"{job_id}.*.snap"):
            try:
                seq = int(path.name.split(".")[-2])
            except ValueError:
                continue
            if best is None or seq > best[0]:
                best = (seq, path)
        while best is not None:
            seq, path = best
            doc = self._read(path)
            if doc is not None:
                return seq, doc["state"]
            # corrupt: fall back to the next older one
            older = [p for p in self.dir.glob(f"{job_id}.*.snap")
                     if int(p.name.split(".")[-2]) < seq]
            if not older:
                return None
            path = max(older, key=lambda p: int(p.name.split(".")[-2]))
            best = (int(path.name.split(".")[-2]), path)
        return None

    def _read(self, path: Path) -> Optional[dict]:
        try:
            doc = json.loads(path.read_text())
            body = json.dumps(doc["state"], sort_keys=True)
            if hashlib.sha256(body.encode()).hexdigest() != doc["digest"]:
                return None
            return doc
        except (OSError, ValueError, KeyError):
            return None

    def job_ids(self) -> list:
        return sorted({p.name.rsplit(".", 2)[0]
                       for p in self.dir.glob("*.snap")})


def blob_to_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def blob_from_b64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))
