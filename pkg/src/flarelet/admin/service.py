"""Admin command dispatch: one authorization/audit path for console and HTTP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..security.authz import AuthzPolicy, authorize
from ..server.jobs import JobConfigError, QUEUED, RUNNING, unzip_job_files

VERBS = ("check_status", "list_jobs", "submit_job", "abort_job", "clone_job",
         "list_clients", "shutdown_client", "shutdown_system", "set_timeout",
         "download_job_result")


@dataclass
class Outcome:
    header: dict
    payload: bytes = b""

    @classmethod
    def ok(cls, result=None, payload: bytes = b"") -> "Outcome":
        return cls({"ok": True, "result": result}, payload)

    @classmethod
    def error(cls, code: str, message: str) -> "Outcome":
        return cls({"ok": False, "error": {"code": code, "message": message}})


class AdminService:
    def __init__(self, server, policy: Optional[AuthzPolicy] = None):
        self.server = server
        self.policy = policy or AuthzPolicy()

    def dispatch(self, identity, verb: str, args: dict,
                 payload: bytes = b"") -> Outcome:
        """Authorize, audit, execute.  Denials are decisions, not errors."""
        decision = authorize(identity.role, verb, self.policy)
        self.server.audit.append(identity.name, f"admin:{verb}",
                                 ref=str(args.get("job_id", "")),
                                 outcome="allowed" if decision else "denied",
                                 detail=decision.reason)
        if not decision:
            return Outcome.error("denied", decision.reason)
        handler = getattr(self, f"_do_{verb}", None)
        if handler is None:
            return Outcome.error("unknown_verb", f"no such command {verb!r}")
        try:
            return handler(identity, args, payload)
        except KeyError as exc:
            return Outcome.error("not_found", f"unknown job {exc}")
        except JobConfigError as exc:
            return Outcome.error("bad_job", str(exc))
        except Exception as exc:  # noqa: BLE001 - surface as admin error
            return Outcome.error("internal", str(exc))

    # -- view ---------------------------------------------------------------

    def _do_check_status(self, identity, args, payload) -> Outcome:
        return Outcome.ok(self.server.status_view())

    def _do_list_jobs(self, identity, args, payload) -> Outcome:
        return Outcome.ok(self.server.status_view()["jobs"])

    def _do_list_clients(self, identity, args, payload) -> Outcome:
        return Outcome.ok(self.server.status_view()["clients"])

    def _do_download_job_result(self, identity, args, payload) -> Outcome:
        blob = self.server.load_result(args["job_id"])
        if blob is None:
            return Outcome.error("not_found",
                                 f"no result for {args['job_id']!r}")
        return Outcome.ok({"job_id": args["job_id"]}, payload=blob)

    # -- job ops ---------------------------------------------------------------

    def _do_submit_job(self, identity, args, payload) -> Outcome:
        files = unzip_job_files(payload)
        job_id = self.server.submit_job(files, submitter={
            "name": identity.name, "org": identity.org, "role": identity.role})
        return Outcome.ok({"job_id": job_id})

    def _do_abort_job(self, identity, args, payload) -> Outcome:
        job_id = args["job_id"]
        state = self.server.job_store.get_state(job_id)  # raises KeyError
        if state["state"] not in (QUEUED, RUNNING):
            return Outcome.error("bad_state",
                                 f"{job_id} is {state['state']}, not abortable")
        self.server.abort_job(job_id)
        return Outcome.ok({"job_id": job_id, "state": "ABORTED"})

    def _do_clone_job(self, identity, args, payload) -> Outcome:
        new_id = self.server.job_store.clone(args["job_id"], submitter={
            "name": identity.name, "org": identity.org, "role": identity.role})
        self.server.scheduler.wake()
        return Outcome.ok({"job_id": new_id})

    def _do_set_timeout(self, identity, args, payload) -> Outcome:
        seconds = float(args["seconds"])
        if seconds <= 0:
            return Outcome.error("bad_value", "timeout must be positive")
        self.server.runtime_settings["task_timeout_s"] = seconds
        return Outcome.ok({"task_timeout_s": seconds})

    # -- system ops ---------------------------------------------------------------

    def _do_shutdown_client(self, identity, args, payload) -> Outcome:
        site = args["site"]
        if site not in self.server.connected_sites():
            return Outcome.error("not_found", f"client {site!r} not connected")
        self.server.queue_control(site, {"op": "shutdown"})
        return Outcome.ok({"site": site})

    def _do_shutdown_system(self, identity, args, payload) -> Outcome:
        for site in self.server.connected_sites():
            self.server.queue_control(site, {"op": "shutdown"})
        import threading
        threading.Thread(target=self.server.stop, daemon=True).start()
        return Outcome.ok({"stopping": True})
