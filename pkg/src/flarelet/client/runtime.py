"""Client runtime: resolve the active server, authenticate, poll, execute.

The protocol is strictly request/response on one connection, driven by a
single loop; task execution happens on a worker pool whose results flow back
through an outbox the loop drains.  A completed-but-unsubmitted result
survives reconnects and cutovers (same task id, server deduplicates).
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..core.clock import SystemClock
from ..core.context import FLContext, Scope
from ..core.shareable import ReturnCode, Shareable
from ..filters import FilterSpec, build_filter
from ..registry import build_executor
from ..security.audit import AuditLog
from ..security.auth import authenticate_outbound
from ..security.authz import AuthzPolicy, client_accepts_job
from ..security.provision import StartupKit
from ..transport.connection import (AuthError, ConnectError, PeerClosed,
                                    RecvTimeout)
from ..transport.driver import driver_connect_raw
from ..transport.frame import Frame, MsgType
from .executor import AbortSignal, ExecutorBinding, execute_task
from .resources import ResourceManager

log = logging.getLogger("flarelet.client")


@dataclass
class ClientConfig:
    server_endpoint: str = ""
    overseer_endpoint: str = ""
    capacities: dict = field(default_factory=dict)
    forced_filters: list = field(default_factory=list)  # FilterSpec dicts
    privacy: dict = field(default_factory=dict)
    authz: dict = field(default_factory=dict)
    poll_interval_s: float = 0.5
    backoff_base_s: float = 1.0
    backoff_cap_s: float = 30.0
    recv_timeout_s: float = 30.0
    threads: int = 4
    abort_grace_s: float = 30.0
    policy_file: str = ""  # hot-reloaded when it changes

    @classmethod
    def from_dict(cls, raw: dict) -> "ClientConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})

    @classmethod
    def load(cls, path) -> "ClientConfig":
        raw = json.loads(Path(path).read_text())
        cfg = cls.from_dict(raw)
        cfg.policy_file = str(path)
        return cfg


@dataclass
class ClientJob:
    job_id: str
    binding: ExecutorBinding
    ctx: FLContext
    abort: AbortSignal
    site_index: int
    num_sites: int


class ClientRuntime:
    def __init__(self, kit: StartupKit, config: ClientConfig, clock=None,
                 work_dir=None, execution_gate=None):
        self.kit = kit
        self.config = config
        self.clock = clock or SystemClock()
        self.site = kit.name
        # optional semaphore bounding concurrent execution across clients
        # (the simulator's --threads cap)
        self._gate = execution_gate
        self.resources = ResourceManager(config.capacities)
        work_dir = Path(work_dir) if work_dir else Path(f".{self.site}-work")
        self.audit = AuditLog(work_dir / "audit.jsonl")
        self.jobs: dict = {}
        self._outbox: list = []
        self._outbox_lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max(config.threads, 1))
        self._inflight = 0
        self._inflight_cv = threading.Condition()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._conn = None
        self._generation = 0
        self._active_endpoint = config.server_endpoint
        self._policy_mtime = self._policy_stat()
        self._forced = self._build_forced(config.forced_filters)
        self.loop_errors = 0
        self.polls = 0

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self.run, daemon=True,
                                        name=f"client-{self.site}")
        self._thread.start()

    def stop(self, timeout: float = 10.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=timeout)
        if self._conn is not None:
            self._conn.close()
        self._pool.shutdown(wait=False)

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    # -- main loop ---------------------------------------------------------------

    def run(self) -> None:
        backoff = self.config.backoff_base_s
        while not self._stop.is_set():
            try:
                self._connect()
                backoff = self.config.backoff_base_s
                self._poll_loop()
            except (ConnectError, AuthError, PeerClosed, RecvTimeout) as exc:
                if isinstance(exc, AuthError):
                    log.error("%s: authentication failed: %s", self.site, exc)
                    self.audit.append(self.site, "auth_failed", detail=str(exc),
                                      outcome="fatal")
                    return
                self.loop_errors += 1
                self._drop_connection()
                if self._stop.is_set():
                    return
                self.clock.sleep(backoff)
                backoff = min(backoff * 2, self.config.backoff_cap_s)
        self._drop_connection()

    def _drop_connection(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def _resolve_endpoint(self) -> str:
        if not self.config.overseer_endpoint:
            return self.config.server_endpoint
        conn = driver_connect_raw(self.config.overseer_endpoint, timeout=5)
        try:
            authenticate_outbound(conn, self.kit)
            conn.send(Frame(MsgType.HEARTBEAT, {"party": self.site,
                                                "role": "client"}))
            ack = conn.recv(timeout=5)
            active = ack.header.get("active")
            generation = ack.header.get("gen", 0)
            if not active:
                raise ConnectError("overseer reports no active server")
            if generation > self._generation:
                self._generation = generation
            return active
        finally:
            conn.close()

    def _connect(self) -> None:
        endpoint = self._resolve_endpoint()
        conn = driver_connect_raw(endpoint, timeout=5)
        authenticate_outbound(conn, self.kit)
        self._conn = conn
        self._active_endpoint = endpoint
        self.audit.append(self.site, "connected", ref=endpoint)

    def _poll_loop(self) -> None:
        while not self._stop.is_set():
            self._maybe_reload_policy()
            busy = self._drain_outbox()
            frame = self._request(Frame(MsgType.TASK_POLL,
                                        {"client": self.site,
                                         "gen": self._generation}))
            self.polls += 1
            if frame.msg_type == MsgType.ERROR:
                reason = frame.header.get("error")
                if reason in ("not_active", "stale_generation"):
                    raise ConnectError(f"server says {reason}")
                raise PeerClosed(f"server error: {frame.header}")
            generation = frame.header.get("gen", 0)
            if isinstance(generation, int) and generation > self._generation:
                self._generation = generation
            if frame.msg_type == MsgType.TASK_ASSIGN:
                self._start_task(frame)
                continue  # immediate re-poll
            controls = frame.header.get("controls") or []
            for control in controls:
                if self._handle_control(control):
                    return  # shutdown
            if controls or busy:
                continue
            self.clock.sleep(self.config.poll_interval_s)

    def _request(self, frame: Frame) -> Frame:
        self._conn.send(frame)
        return self._conn.recv(timeout=self.config.recv_timeout_s)

    # -- outbox ---------------------------------------------------------------

    def _enqueue(self, kind: str, body: dict, payload: bytes = b"") -> None:
        with self._outbox_lock:
            self._outbox.append((kind, body, payload))

    def _drain_outbox(self) -> bool:
        with self._outbox_lock:
            items, self._outbox = self._outbox[:], []
        for kind, body, payload in items:
            if kind == "result":
                frame = Frame(MsgType.RESULT_SUBMIT,
                              {**body, "client": self.site,
                               "gen": self._generation}, payload)
                try:
                    ack = self._request(frame)
                except (PeerClosed, RecvTimeout):
                    # connection died mid-submit: retry after reconnect
                    with self._outbox_lock:
                        self._outbox.insert(0, (kind, body, payload))
                    raise
                if ack.msg_type == MsgType.ERROR:
                    with self._outbox_lock:
                        self._outbox.insert(0, (kind, body, payload))
                    raise ConnectError(f"submit rejected: {ack.header}")
            else:
                self._conn.send(Frame(MsgType.ACK,
                                      {"client": self.site,
                                       "control_reply": body}))
        return bool(items)

    # -- task execution ---------------------------------------------------------------

    def _start_task(self, frame: Frame) -> None:
        job_id = frame.header.get("job_id", "")
        task_id = frame.header.get("task_id", "")
        task_name = frame.header.get("task_name", "")
        job = self.jobs.get(job_id)
        data = Shareable(headers=frame.header.get("sh") or {},
                         return_code=frame.header.get("rc", "OK"),
                         payload=frame.payload or None)
        if job is None:
            self.audit.append(self.site, "task_unknown_job", ref=task_id)
            self._enqueue("result", {"job_id": job_id, "task_id": task_id,
                                     "sh": dict(data.headers),
                                     "rc": ReturnCode.TASK_UNKNOWN.value})
            return

        with self._inflight_cv:
            self._inflight += 1

        def work():
            try:
                if self._gate is not None:
                    self._gate.acquire()
                try:
                    result = execute_task(
                        job.binding, task_name, data, job.ctx, job.abort,
                        audit=lambda action, detail: self.audit.append(
                            self.site, action, ref=task_id, detail=detail))
                finally:
                    if self._gate is not None:
                        self._gate.release()
                self.audit.append(self.site, "task_executed", ref=task_id,
                                  outcome=result.return_code.value)
                self._enqueue("result",
                              {"job_id": job_id, "task_id": task_id,
                               "sh": dict(result.headers),
                               "rc": result.return_code.value},
                              result.payload or b"")
            finally:
                with self._inflight_cv:
                    self._inflight -= 1
                    self._inflight_cv.notify_all()

        self._pool.submit(work)

    # -- controls ---------------------------------------------------------------

    def _handle_control(self, control: dict) -> bool:
        """Returns True when the loop should exit (shutdown)."""
        op = control.get("op")
        if op == "job_start":
            self._job_start(control)
        elif op == "job_stop":
            job = self.jobs.pop(control.get("job_id", ""), None)
            if job is not None:
                job.abort.trigger()
            self.resources.release(control.get("job_id", ""))
        elif op == "resource_check":
            accept = self.resources.check(control["job_id"],
                                          control.get("spec", {}))
            self._enqueue("control_reply", {"op": op, "xid": control.get("xid"),
                                            "job_id": control["job_id"],
                                            "accept": accept})
        elif op == "resource_reserve":
            accept = self.resources.reserve(control["job_id"],
                                            control.get("spec", {}))
            self._enqueue("control_reply", {"op": op, "xid": control.get("xid"),
                                            "job_id": control["job_id"],
                                            "accept": accept})
        elif op == "resource_release":
            self.resources.release(control.get("job_id", ""))
        elif op == "shutdown":
            self.audit.append(self.site, "shutdown_requested")
            self._await_quiesce()
            self._stop.set()
            return True
        return False

    def _job_start(self, control: dict) -> None:
        job_id = control.get("job_id", "")
        if job_id in self.jobs:
            # re-deploy after a server cutover: keep local state (controls,
            # shards) so the resumed job continues seamlessly
            self._enqueue("control_reply", {"op": "job_start",
                                            "job_id": job_id, "accept": True})
            return
        submitter = control.get("submitter", {})
        policy = AuthzPolicy.from_dict(self.config.authz) if self.config.authz \
            else AuthzPolicy()
        decision = client_accepts_job(submitter.get("org", ""),
                                      submitter.get("role", ""),
                                      self.kit.org, policy)
        self.audit.append(self.site, "job_acceptance", ref=job_id,
                          outcome="allowed" if decision else "denied",
                          detail=decision.reason)
        if not decision:
            self._enqueue("control_reply", {"op": "job_start", "job_id": job_id,
                                            "accept": False,
                                            "reason": decision.reason})
            return
        try:
            binding = self._build_binding(control.get("client_config") or {},
                                          control)
        except Exception as exc:  # noqa: BLE001 - bad job config is a rejection
            self.audit.append(self.site, "job_config_rejected", ref=job_id,
                              detail=str(exc), outcome="denied")
            self._enqueue("control_reply", {"op": "job_start", "job_id": job_id,
                                            "accept": False, "reason": str(exc)})
            return
        ctx = FLContext(identity=self.site, job_id=job_id)
        ctx.put(Scope.RUN, "site_index", control.get("site_index", 0))
        self.jobs[job_id] = ClientJob(
            job_id=job_id, binding=binding, ctx=ctx, abort=AbortSignal(),
            site_index=control.get("site_index", 0),
            num_sites=control.get("num_sites", 1))
        self._enqueue("control_reply", {"op": "job_start", "job_id": job_id,
                                        "accept": True})

    def _build_binding(self, client_config: dict, control: dict) -> ExecutorBinding:
        site_ctx = {"site": self.site, "org": self.kit.org,
                    "site_index": control.get("site_index", 0),
                    "num_sites": control.get("num_sites", 1),
                    "job_id": control.get("job_id", ""),
                    "privacy": self.config.privacy}
        bindings = []
        for raw in client_config.get("executors", []):
            executor = build_executor(raw.get("executor", {}), site_ctx)
            bindings.append((list(raw.get("tasks", [])), executor))
        data_filters = [build_filter(FilterSpec.from_dict(raw))
                        for raw in client_config.get("task_data_filters", [])]
        result_filters = [build_filter(FilterSpec.from_dict(raw))
                          for raw in client_config.get("task_result_filters", [])]
        return ExecutorBinding(bindings, data_filters, result_filters,
                               forced_data_filters=self._forced["data"],
                               forced_result_filters=self._forced["result"])

    def _build_forced(self, specs: list) -> dict:
        forced = {"data": [], "result": []}
        for raw in specs:
            spec = FilterSpec.from_dict(raw)
            side = "data" if spec.direction == "TASK_DATA" else "result"
            forced[side].append(build_filter(spec))
        return forced

    # -- policy hot reload -------------------------------------------------------

    def _policy_stat(self) -> float:
        if self.config.policy_file and Path(self.config.policy_file).exists():
            return Path(self.config.policy_file).stat().st_mtime
        return 0.0

    def _maybe_reload_policy(self) -> None:
        if not self.config.policy_file:
            return
        mtime = self._policy_stat()
        if mtime <= self._policy_mtime:
            return
        self._policy_mtime = mtime
        try:
            raw = json.loads(Path(self.config.policy_file).read_text())
        except (OSError, ValueError) as exc:
            self.audit.append(self.site, "policy_reload_failed", detail=str(exc),
                              outcome="warning")
            return
        fresh = ClientConfig.from_dict(raw)
        self.config.capacities = fresh.capacities
        self.resources.set_capacities(fresh.capacities)
        self.config.privacy = fresh.privacy
        self.config.authz = fresh.authz
        self._forced = self._build_forced(fresh.forced_filters)
        self.audit.append(self.site, "policy_reloaded")

    def _await_quiesce(self) -> None:
        deadline = self.clock.now() + self.config.abort_grace_s
        with self._inflight_cv:
            while self._inflight > 0 and self.clock.now() < deadline:
                self._inflight_cv.wait(timeout=0.1)
        try:
            self._drain_outbox()
        except Exception:  # noqa: BLE001 - best effort on the way out
            pass
