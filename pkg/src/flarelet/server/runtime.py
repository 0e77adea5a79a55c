"""The federated server: connection handling, job engines, scheduling, HA.

One listener thread accepts authenticated connections; a handler thread per
connection routes polls, results, heartbeats, control replies and admin
commands.  Each running job owns a workflow thread programming against the
controller context.  The scheduler talks to client resource managers through
poll-delivered control messages.  With an overseer configured, the server
starts as standby and only serves work once promoted.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..core.clock import SystemClock
from ..core.events import EventBus, EventType
from ..core.shareable import ReturnCode, Shareable
from ..registry import build_workflow, executor_types, workflow_types
from ..security.audit import AuditLog
from ..security.auth import authenticate_inbound
from ..security.provision import StartupKit
from ..transport.connection import AuthError, PeerClosed, RecvTimeout
from ..transport.driver import driver_connect_raw, driver_listen
from ..transport.frame import Frame, MsgType
from .controller import ControllerContext
from .jobs import (ABORTED, DONE, FAILED, JobStore, QUEUED, RUNNING,
                   TERMINAL_JOB_STATES)
from .scheduler import ResourceGateway, Scheduler
from .snapshot import SnapshotStore
from .tasks import JobAborted, TaskManager

log = logging.getLogger("flarelet.server")


@dataclass
class ServerSettings:
    poll_controls_first: bool = True
    resource_reply_timeout_s: float = 10.0
    scheduler_interval_s: float = 0.5
    scheduler_max_attempts: int = 30
    heartbeat_interval_s: float = 5.0
    default_task_timeout_s: float = 120.0
    recv_timeout_s: float = 30.0
    # how long a job waits for its target clients to (re)connect before the
    # first broadcast, mostly relevant right after a takeover
    client_wait_s: float = 60.0


@dataclass
class ClientSession:
    site: str
    org: str
    conn: object
    last_seen: float = 0.0


class JobRuntime:
    def __init__(self, job_id: str, definition, workflow, engine: TaskManager,
                 ctx: ControllerContext, targets: list):
        self.job_id = job_id
        self.definition = definition
        self.workflow = workflow
        self.engine = engine
        self.ctx = ctx
        self.targets = targets
        self.thread: Optional[threading.Thread] = None
        self.metrics: list = []
        self.metrics_cv = threading.Condition()
        self.snapshot_seq = 0
        self.result: Optional[dict] = None


class _ControlGateway(ResourceGateway):
    """Resource exchange over the poll plane: queue a control, await reply."""

    def __init__(self, server: "FederatedServer"):
        self.server = server

    def _exchange(self, site: str, op: str, job_id: str, spec: dict) -> bool:
        xid = self.server._next_xid()
        control = {"op": op, "xid": xid, "job_id": job_id, "spec": spec}
        event = threading.Event()
        self.server._pending_replies[xid] = {"event": event, "reply": None}
        self.server.queue_control(site, control)
        event.wait(timeout=self.server.settings.resource_reply_timeout_s)
        entry = self.server._pending_replies.pop(xid, None)
        reply = entry["reply"] if entry else None
        return bool(reply and reply.get("accept"))

    def check(self, site, job_id, spec) -> bool:
        return self._exchange(site, "resource_check", job_id, spec)

    def reserve(self, site, job_id, spec) -> bool:
        return self._exchange(site, "resource_reserve", job_id, spec)

    def release(self, site, job_id) -> None:
        self.server.queue_control(site, {"op": "resource_release",
                                         "job_id": job_id})


class FederatedServer:
    def __init__(self, kit: StartupKit, endpoint: str, work_dir,
                 overseer_endpoint: Optional[str] = None,
                 settings: Optional[ServerSettings] = None, clock=None,
                 shared_dir=None):
        self.kit = kit
        self.endpoint = endpoint
        self.work_dir = Path(work_dir)
        self.settings = settings or ServerSettings()
        self.clock = clock or SystemClock()
        self.overseer_endpoint = overseer_endpoint

        # jobs / snapshots / results live in the HA-shared directory so a
        # promoted standby can pick them up; audit stays per-server
        shared = Path(shared_dir) if shared_dir else self.work_dir
        self.job_store = JobStore(shared / "jobs")
        self.snapshots = SnapshotStore(shared / "snapshots")
        self.audit = AuditLog(self.work_dir / "audit.jsonl")
        self.results_dir = shared / "results"
        self.results_dir.mkdir(parents=True, exist_ok=True)
        self._killed = False

        self.generation = 0 if overseer_endpoint else 1
        self.active = overseer_endpoint is None
        self._listener = None
        self._threads: list = []
        self._stop = threading.Event()
        self._lock = threading.RLock()
        self._sessions: dict = {}  # site -> ClientSession
        self._controls: dict = {}  # site -> list of control dicts
        self._pending_replies: dict = {}
        self._xid = 0
        self._seen_nonces: set = set()
        self.jobs: dict = {}  # job_id -> JobRuntime
        self.transcript: dict = {}  # site -> [(msg_type, payload sha256)]
        self.runtime_settings = {"task_timeout_s":
                                 self.settings.default_task_timeout_s}

        self.scheduler = Scheduler(
            self.job_store, _ControlGateway(self), self.connected_sites,
            self._deploy_job, clock=self.clock,
            retry_interval_s=self.settings.scheduler_interval_s,
            max_attempts=self.settings.scheduler_max_attempts,
            audit=lambda action, detail: self.audit.append(
                self.kit.name, action, ref=detail))

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        self._listener = driver_listen(self.endpoint)
        # an OS-assigned port must be resolved before anyone learns of us
        if self.endpoint.startswith("tcp://") and self.endpoint.endswith(":0"):
            host = self.endpoint[len("tcp://"):].rsplit(":", 1)[0]
            self.endpoint = f"tcp://{host}:{self._listener.port}"
        self._spawn(self._accept_loop, "accept")
        self._spawn(self.scheduler.run, "scheduler")
        if self.overseer_endpoint:
            self._spawn(self._overseer_loop, "overseer-client")
        self.audit.append(self.kit.name, "server_started", ref=self.endpoint)

    def stop(self) -> None:
        self._stop.set()
        self.scheduler.stop()
        for runtime in list(self.jobs.values()):
            runtime.engine.abort()
        if self._listener is not None:
            self._listener.close()
        with self._lock:
            for session in list(self._sessions.values()):
                session.conn.close()
        for thread in self._threads:
            thread.join(timeout=5)
        self.audit.append(self.kit.name, "server_stopped")

    def kill(self) -> None:
        """Die abruptly: close everything but leave job states untouched,
        so a standby can resume them from the snapshots."""
        self._killed = True
        self._stop.set()
        self.scheduler.stop()
        self.active = False
        for runtime in list(self.jobs.values()):
            runtime.engine.abort()
        if self._listener is not None:
            self._listener.close()
        with self._lock:
            for session in list(self._sessions.values()):
                session.conn.close()

    def _spawn(self, target, name) -> None:
        thread = threading.Thread(target=target, daemon=True,
                                  name=f"{self.kit.name}-{name}")
        thread.start()
        self._threads.append(thread)

    @property
    def port(self) -> int:
        return getattr(self._listener, "port", 0)

    # -- connections ---------------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn = self._listener.accept(timeout=0.5)
            except RecvTimeout:
                continue
            except PeerClosed:
                return
            threading.Thread(target=self._handle_connection, args=(conn,),
                             daemon=True).start()

    def _handle_connection(self, conn) -> None:
        try:
            peer = authenticate_inbound(conn, self.kit,
                                        seen_nonces=self._seen_nonces)
        except AuthError as exc:
            self.audit.append(self.kit.name, "auth_rejected", detail=str(exc),
                              outcome="denied")
            return
        if peer.party_type == "client":
            session = ClientSession(site=peer.name, org=peer.org, conn=conn,
                                    last_seen=self.clock.now())
            with self._lock:
                self._sessions[peer.name] = session
            self.audit.append(peer.name, "client_connected")
            self._client_loop(session)
        elif peer.party_type == "admin":
            self._admin_loop(conn, peer)
        else:
            conn.close()

    def connected_sites(self) -> list:
        with self._lock:
            return [site for site, session in self._sessions.items()
                    if not session.conn.closed]

    def _client_loop(self, session: ClientSession) -> None:
        conn = session.conn
        while not self._stop.is_set():
            try:
                frame = conn.recv(timeout=self.settings.recv_timeout_s)
            except RecvTimeout:
                continue
            except PeerClosed:
                break
            session.last_seen = self.clock.now()
            try:
                reply = self._dispatch_client_frame(session, frame)
            except Exception as exc:  # noqa: BLE001 - keep serving
                log.warning("error handling %s from %s: %s",
                            frame.msg_type.name, session.site, exc)
                reply = Frame(MsgType.ERROR, {"error": "internal",
                                              "reason": str(exc)})
            if reply is not None:
                try:
                    conn.send(reply)
                except PeerClosed:
                    break
        with self._lock:
            if self._sessions.get(session.site) is session:
                del self._sessions[session.site]

    def _dispatch_client_frame(self, session: ClientSession,
                               frame: Frame) -> Optional[Frame]:
        if frame.msg_type == MsgType.HEARTBEAT:
            return Frame(MsgType.ACK, {"gen": self.generation})
        if frame.msg_type == MsgType.ACK:
            self._handle_control_reply(frame.header.get("control_reply") or {})
            return None
        if frame.msg_type == MsgType.TASK_POLL:
            return self._handle_poll(session, frame)
        if frame.msg_type == MsgType.RESULT_SUBMIT:
            return self._handle_submit(session, frame)
        return Frame(MsgType.ERROR, {"error": "unexpected",
                                     "reason": frame.msg_type.name})

    # -- poll / submit ---------------------------------------------------------------

    def _stale(self, frame: Frame) -> Optional[Frame]:
        if not self.active:
            return Frame(MsgType.ERROR, {"error": "not_active",
                                         "gen": self.generation})
        claimed = frame.header.get("gen", 0)
        if isinstance(claimed, int) and claimed > self.generation:
            return Frame(MsgType.ERROR, {"error": "stale_generation",
                                         "gen": self.generation})
        return None

    def _handle_poll(self, session: ClientSession, frame: Frame) -> Frame:
        stale = self._stale(frame)
        if stale is not None:
            return stale
        site = session.site
        controls = self._drain_controls(site)
        if controls:
            return Frame(MsgType.ACK, {"task": "none", "controls": controls,
                                       "gen": self.generation})
        with self._lock:
            running = sorted(job_id for job_id, rt in self.jobs.items()
                             if rt.thread is not None and rt.thread.is_alive())
        for job_id in running:
            runtime = self.jobs.get(job_id)
            if runtime is None or site not in runtime.targets:
                continue
            polled = runtime.engine.poll(site)
            if polled is None:
                continue
            assignment, task = polled
            headers = dict(task.data.headers)
            headers.update({"task_name": task.name, "task_id": assignment.task_id,
                            "job_id": job_id, "peer": self.kit.name})
            payload = task.data.payload or b""
            self._record_transcript(site, MsgType.TASK_ASSIGN, payload)
            return Frame(MsgType.TASK_ASSIGN,
                         {"job_id": job_id, "task_id": assignment.task_id,
                          "task_name": task.name, "sh": headers,
                          "rc": task.data.return_code.value,
                          "gen": self.generation},
                         payload)
        return Frame(MsgType.ACK, {"task": "none", "gen": self.generation})

    def _handle_submit(self, session: ClientSession, frame: Frame) -> Frame:
        stale = self._stale(frame)
        if stale is not None:
            return stale
        job_id = frame.header.get("job_id", "")
        task_id = frame.header.get("task_id", "")
        runtime = self.jobs.get(job_id)
        if runtime is None:
            self.audit.append(session.site, "result_discarded", ref=task_id,
                              outcome="unknown_job")
            return Frame(MsgType.ACK, {"accepted": False, "gen": self.generation})
        shareable = Shareable(headers=frame.header.get("sh") or {},
                              return_code=frame.header.get("rc", "OK"),
                              payload=frame.payload or None)
        accepted = runtime.engine.submit_result(session.site, task_id, shareable)
        if accepted:
            self._record_transcript(session.site, MsgType.RESULT_SUBMIT,
                                    frame.payload or b"")
        return Frame(MsgType.ACK, {"accepted": accepted,
                                   "gen": self.generation})

    def _record_transcript(self, site: str, msg_type: MsgType,
                           payload: bytes) -> None:
        digest = hashlib.sha256(payload).hexdigest()
        with self._lock:
            self.transcript.setdefault(site, []).append((msg_type.name, digest))

    # -- controls ---------------------------------------------------------------

    def queue_control(self, site: str, control: dict) -> None:
        with self._lock:
            self._controls.setdefault(site, []).append(control)

    def _drain_controls(self, site: str) -> list:
        with self._lock:
            controls = self._controls.pop(site, [])
        return controls

    def _handle_control_reply(self, reply: dict) -> None:
        xid = reply.get("xid")
        entry = self._pending_replies.get(xid)
        if entry is not None:
            entry["reply"] = reply
            entry["event"].set()

    def _next_xid(self) -> str:
        with self._lock:
            self._xid += 1
            return f"x{self._xid}"

    # -- jobs ---------------------------------------------------------------

    def submit_job(self, files: dict, submitter: dict) -> str:
        from .jobs import JobDefinition
        definition = JobDefinition.from_files(files)
        definition.validate(workflow_types(), executor_types())
        job_id = self.job_store.submit(files, submitter)
        self.audit.append(submitter.get("name", "?"), "job_submitted",
                          ref=job_id)
        self.scheduler.wake()
        return job_id

    def _deploy_job(self, job_id: str, targets: list,
                    resume_state: Optional[dict] = None) -> None:
        definition = self.job_store.load_definition(job_id)
        workflow = build_workflow(definition.server_config)
        if resume_state is not None:
            workflow.restore_state(resume_state)
        engine = TaskManager(job_id, clock=self.clock,
                             audit=lambda action, detail: self.audit.append(
                                 self.kit.name, action, ref=job_id,
                                 detail=detail))
        runtime = JobRuntime(job_id, definition, workflow, engine,
                             ctx=None, targets=targets)

        def live():
            return [s for s in self.connected_sites() if s in targets]

        def snapshot_hook(state: dict) -> None:
            runtime.snapshot_seq += 1
            self.snapshots.save(job_id, runtime.snapshot_seq, state)

        def metric_hook(payload: dict) -> None:
            with runtime.metrics_cv:
                runtime.metrics.append({"cursor": len(runtime.metrics),
                                        **payload})
                runtime.metrics_cv.notify_all()

        ctx = ControllerContext(
            job_id, engine, live,
            audit=lambda action, detail="": self.audit.append(
                self.kit.name, action, ref=job_id, detail=detail),
            snapshot_hook=snapshot_hook, metric_hook=metric_hook)
        runtime.ctx = ctx
        with self._lock:
            self.jobs[job_id] = runtime

        state = self.job_store.get_state(job_id)
        submitter = state.get("submitter", {})
        ordered = sorted(targets)
        for index, site in enumerate(ordered):
            self.queue_control(site, {
                "op": "job_start", "job_id": job_id,
                "client_config": definition.client_config,
                "submitter": submitter,
                "site_index": index, "num_sites": len(ordered)})

        runtime.thread = threading.Thread(
            target=self._run_job, args=(runtime,), daemon=True,
            name=f"job-{job_id}")
        runtime.thread.start()

    def _run_job(self, runtime: JobRuntime) -> None:
        job_id = runtime.job_id
        ctx = runtime.ctx
        self.audit.append(self.kit.name, "job_started", ref=job_id)
        # after a cutover the clients need a moment to re-home before the
        # first broadcast can reach them
        need = runtime.definition.meta.min_clients
        deadline = self.clock.now() + self.settings.client_wait_s
        while (len([s for s in self.connected_sites()
                    if s in runtime.targets]) < need
               and self.clock.now() < deadline
               and not runtime.engine.aborted and not self._stop.is_set()):
            self.clock.sleep(0.02)
        ctx.fire(EventType.START_RUN, {"job_id": job_id})
        try:
            result = runtime.workflow.run(ctx)
            runtime.result = result
            self._save_result(job_id, result)
            self.job_store.update_state(job_id, state=DONE,
                                        round=runtime.workflow.get_state().get(
                                            "round", -1))
            self.audit.append(self.kit.name, "job_finished", ref=job_id)
        except JobAborted:
            if self._killed:
                return  # crash path: leave the store at RUNNING for takeover
            self.job_store.update_state(job_id, state=ABORTED)
            self.audit.append(self.kit.name, "job_aborted", ref=job_id)
        except Exception as exc:  # noqa: BLE001 - job failure is a state
            if self._killed:
                return
            log.warning("job %s failed: %s", job_id, exc)
            self.job_store.update_state(job_id, state=FAILED, detail=str(exc))
            self.audit.append(self.kit.name, "job_failed", ref=job_id,
                              detail=str(exc), outcome="failed")
        finally:
            if not self._killed:
                ctx.fire(EventType.END_RUN, {"job_id": job_id})
                for site in runtime.targets:
                    self.queue_control(site, {"op": "job_stop",
                                              "job_id": job_id})
                self.scheduler.job_finished(job_id)

    def abort_job(self, job_id: str) -> bool:
        runtime = self.jobs.get(job_id)
        state = self.job_store.get_state(job_id)
        if runtime is not None and state.get("state") == RUNNING:
            runtime.engine.abort()
            return True
        if state.get("state") == QUEUED:
            self.job_store.update_state(job_id, state=ABORTED)
            return True
        return False

    def _save_result(self, job_id: str, result: dict) -> None:
        import json
        (self.results_dir / f"{job_id}.json").write_text(json.dumps(result))

    def load_result(self, job_id: str) -> Optional[bytes]:
        path = self.results_dir / f"{job_id}.json"
        return path.read_bytes() if path.exists() else None

    def wait_for_job(self, job_id: str, timeout_s: float = 300.0) -> dict:
        deadline = self.clock.now() + timeout_s
        while self.clock.now() < deadline:
            state = self.job_store.get_state(job_id)
            if state["state"] in TERMINAL_JOB_STATES:
                return state
            self.clock.sleep(0.02)
        return self.job_store.get_state(job_id)

    # -- HA ---------------------------------------------------------------

    def _overseer_loop(self) -> None:
        from ..security.auth import authenticate_outbound
        conn = None
        while not self._stop.is_set():
            try:
                if conn is None or conn.closed:
                    conn = driver_connect_raw(self.overseer_endpoint, timeout=5)
                    authenticate_outbound(conn, self.kit)
                conn.send(Frame(MsgType.HEARTBEAT,
                                {"party": self.kit.name, "role": "server",
                                 "endpoint": self.endpoint}))
                ack = conn.recv(timeout=5)
                self._apply_overseer_view(ack.header)
            except Exception:  # noqa: BLE001 - overseer may be down; keep beating
                if conn is not None:
                    conn.close()
                conn = None
            self.clock.sleep(self.settings.heartbeat_interval_s)

    def _apply_overseer_view(self, view: dict) -> None:
        active_endpoint = view.get("active")
        generation = view.get("gen", 0)
        if active_endpoint == self.endpoint:
            newly_promoted = not self.active
            self.active = True
            if generation > self.generation:
                self.generation = generation
            if newly_promoted:
                self.audit.append(self.kit.name, "server_promoted",
                                  ref=f"gen={self.generation}")
                self._takeover()
        else:
            self.active = False
            if generation > self.generation:
                self.generation = generation

    def _takeover(self) -> None:
        """Resume every RUNNING job from its latest snapshot."""
        for job_id in self.job_store.jobs_in_state(RUNNING):
            if job_id in self.jobs:
                continue
            state = self.job_store.get_state(job_id)
            targets = state.get("targets") or []
            loaded = self.snapshots.load_latest(job_id)
            if loaded is None:
                self.audit.append(self.kit.name, "job_restarted_no_snapshot",
                                  ref=job_id, outcome="warning")
                resume_state = None
            else:
                _, resume_state = loaded
            self.audit.append(self.kit.name, "job_resumed", ref=job_id,
                              detail=f"from_round={resume_state.get('round') if resume_state else 0}")
            self._deploy_job(job_id, targets, resume_state=resume_state)

    # -- status ---------------------------------------------------------------

    def status_view(self) -> dict:
        with self._lock:
            clients = {site: {"last_seen": session.last_seen,
                              "org": session.org}
                       for site, session in self._sessions.items()}
        jobs = []
        for job_id in self.job_store.job_ids():
            state = self.job_store.get_state(job_id)
            runtime = self.jobs.get(job_id)
            round_index = -1
            if runtime is not None:
                round_index = runtime.workflow.get_state().get("round", -1)
            jobs.append({"job_id": job_id, "name": state.get("name", ""),
                         "state": state.get("state"),
                         "round": round_index,
                         "submitter": state.get("submitter", {}),
                         "detail": state.get("detail", "")})
        return {"server": self.kit.name, "endpoint": self.endpoint,
                "generation": self.generation, "active": self.active,
                "clients": clients, "jobs": jobs,
                "settings": dict(self.runtime_settings)}

    def job_metrics(self, job_id: str, since: int = 0,
                    wait_s: float = 0.0) -> list:
        runtime = self.jobs.get(job_id)
        if runtime is None:
            return []
        with runtime.metrics_cv:
            if wait_s > 0 and len(runtime.metrics) <= since:
                runtime.metrics_cv.wait(timeout=wait_s)
            return list(runtime.metrics[since:])

    # -- admin plane (console over frames) ----------------------------------------

    def _admin_loop(self, conn, peer) -> None:
        from ..admin.service import AdminService
        service = AdminService(self)
        while not self._stop.is_set():
            try:
                frame = conn.recv(timeout=self.settings.recv_timeout_s)
            except RecvTimeout:
                continue
            except PeerClosed:
                return
            if frame.msg_type != MsgType.ADMIN:
                conn.send(Frame(MsgType.ERROR, {"error": "unexpected"}))
                continue
            verb = frame.header.get("verb", "")
            args = frame.header.get("args") or {}
            outcome = service.dispatch(peer, verb, args, frame.payload)
            try:
                conn.send(Frame(MsgType.ADMIN, outcome.header, outcome.payload))
            except PeerClosed:
                return
