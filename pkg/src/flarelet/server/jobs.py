"""Job definitions and the shared, file-backed job store.

A job is a portable directory: meta.json plus app/config_server.json and
app/config_client.json.  The same definition runs under the simulator and a
TCP deployment.  The store keeps definitions and states on disk (one
subdirectory per job) so a standby server can take over running jobs.
"""

from __future__ import annotations

import base64
import io
import json
import os
import threading
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..filters.base import FilterSpec
from ..filters import build_filter

META_FILE = "meta.json"
SERVER_CONFIG = "app/config_server.json"
CLIENT_CONFIG = "app/config_client.json"


class JobConfigError(ValueError):
    pass


QUEUED = "QUEUED"
RUNNING = "RUNNING"
DONE = "DONE"
FAILED = "FAILED"
ABORTED = "ABORTED"
UNSCHEDULABLE = "UNSCHEDULABLE"
JOB_STATES = (QUEUED, RUNNING, DONE, FAILED, ABORTED, UNSCHEDULABLE)
TERMINAL_JOB_STATES = (DONE, FAILED, ABORTED, UNSCHEDULABLE)


@dataclass
class JobMeta:
    name: str
    min_clients: int = 1
    resource_spec: dict = field(default_factory=dict)
    deploy_map: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "JobMeta":
        meta = cls(name=raw.get("name", ""),
                   min_clients=int(raw.get("min_clients", 1)),
                   resource_spec=dict(raw.get("resource_spec", {})),
                   deploy_map=dict(raw.get("deploy_map", {})))
        if not meta.name:
            raise JobConfigError("meta.json needs a job name")
        if meta.min_clients < 1:
            raise JobConfigError("min_clients must be >= 1")
        for resource, quantity in meta.resource_spec.items():
            if quantity < 0:
                raise JobConfigError(f"negative resource {resource!r}")
        return meta

    def to_dict(self) -> dict:
        return {"name": self.name, "min_clients": self.min_clients,
                "resource_spec": self.resource_spec,
                "deploy_map": self.deploy_map}


@dataclass
class JobDefinition:
    meta: JobMeta
    server_config: dict
    client_config: dict
    files: dict  # relpath -> bytes, the portable directory verbatim

    @classmethod
    def from_files(cls, files: dict) -> "JobDefinition":
        def read_json(name):
            if name not in files:
                raise JobConfigError(f"job directory missing {name}")
            try:
                return json.loads(files[name].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise JobConfigError(f"{name} is not valid JSON: {exc}")

        return cls(meta=JobMeta.from_dict(read_json(META_FILE)),
                   server_config=read_json(SERVER_CONFIG),
                   client_config=read_json(CLIENT_CONFIG),
                   files=dict(files))

    def validate(self, workflow_types, executor_types) -> None:
        workflow = self.server_config.get("workflow", {})
        if workflow.get("type") not in workflow_types:
            raise JobConfigError(f"unknown workflow type {workflow.get('type')!r}")
        bindings = self.client_config.get("executors", [])
        if not bindings:
            raise JobConfigError("config_client.json binds no executors")
        for binding in bindings:
            executor = binding.get("executor", {})
            if executor.get("type") not in executor_types:
                raise JobConfigError(
                    f"unknown executor type {executor.get('type')!r}")
            if not binding.get("tasks"):
                raise JobConfigError("executor binding without task patterns")
        for key in ("task_data_filters", "task_result_filters"):
            for raw in self.client_config.get(key, []):
                build_filter(FilterSpec.from_dict(raw))  # raises on bad spec


def load_job_dir(path) -> dict:
    """Read a job directory into the portable {relpath: bytes} map."""
    root = Path(path)
    if not root.is_dir():
        raise JobConfigError(f"{path} is not a directory")
    files = {}
    for item in sorted(root.rglob("*")):
        if item.is_file():
            files[item.relative_to(root).as_posix()] = item.read_bytes()
    return files


def write_job_dir(path, files: dict) -> None:
    root = Path(path)
    for rel, data in files.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)


def zip_job_files(files: dict) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for rel in sorted(files):
            zf.writestr(rel, files[rel])
    return buf.getvalue()


def unzip_job_files(blob: bytes) -> dict:
    try:
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            return {info.filename: zf.read(info.filename)
                    for info in zf.infolist() if not info.is_dir()}
    except zipfile.BadZipFile as exc:
        raise JobConfigError(f"bad job archive: {exc}")


class JobStore:
    """Shared directory of job definitions and states.

    States are written via atomic rename; job ids are small decimal counters
    so a resumed server allocates where the dead one stopped.
    """

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _next_id(self) -> str:
        existing = [int(p.name[1:]) for p in self.dir.iterdir()
                    if p.is_dir() and p.name.startswith("J")
                    and p.name[1:].isdigit()]
        return f"J{(max(existing) + 1 if existing else 1):04d}"

    def submit(self, files: dict, submitter: dict) -> str:
        definition = JobDefinition.from_files(files)  # validates shape
        with self._lock:
            job_id = self._next_id()
            job_dir = self.dir / job_id
            job_dir.mkdir()
            (job_dir / "definition.json").write_text(json.dumps(
                {rel: base64.b64encode(data).decode("ascii")
                 for rel, data in files.items()}))
            self._write_state(job_id, {
                "state": QUEUED, "submitter": submitter, "round": -1,
                "name": definition.meta.name, "attempts": 0, "detail": "",
                "targets": []})
            return job_id

    def clone(self, job_id: str, submitter: dict) -> str:
        files = self.load_files(job_id)
        return self.submit(files, submitter)

    def load_files(self, job_id: str) -> dict:
        path = self.dir / job_id / "definition.json"
        if not path.exists():
            raise KeyError(job_id)
        doc = json.loads(path.read_text())
        return {rel: base64.b64decode(data) for rel, data in doc.items()}

    def load_definition(self, job_id: str) -> JobDefinition:
        return JobDefinition.from_files(self.load_files(job_id))

    def _write_state(self, job_id: str, state: dict) -> None:
        path = self.dir / job_id / "state.json"
        tmp = self.dir / job_id / ".state.tmp"
        tmp.write_text(json.dumps(state, sort_keys=True))
        os.replace(tmp, path)

    def get_state(self, job_id: str) -> dict:
        path = self.dir / job_id / "state.json"
        if not path.exists():
            raise KeyError(job_id)
        return json.loads(path.read_text())

    def update_state(self, job_id: str, **changes) -> dict:
        with self._lock:
            state = self.get_state(job_id)
            state.update(changes)
            self._write_state(job_id, state)
            return state

    def job_ids(self) -> list:
        return sorted(p.name for p in self.dir.iterdir()
                      if p.is_dir() and (p / "state.json").exists())

    def jobs_in_state(self, *states) -> list:
        out = []
        for job_id in self.job_ids():
            if self.get_state(job_id).get("state") in states:
                out.append(job_id)
        return out
