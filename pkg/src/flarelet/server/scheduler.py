"""Resource-based FIFO job scheduler with all-or-nothing reservation.

Each tick walks the queue in submission order.  A job deploys only when every
required site confirms capacity (check phase) and then commits the
reservation (reserve phase); any refusal rolls back cleanly and the job stays
queued for the next tick.  Jobs that keep failing go UNSCHEDULABLE.
"""

from __future__ import annotations

import logging
import threading
from typing import Callable, Optional

from ..core.clock import SystemClock
from .jobs import (JobStore, QUEUED, RUNNING, TERMINAL_JOB_STATES,
                   UNSCHEDULABLE)

log = logging.getLogger("flarelet.scheduler")


class ResourceGateway:
    """How the scheduler talks to client resource managers."""

    def check(self, site: str, job_id: str, spec: dict) -> bool:
        raise NotImplementedError

    def reserve(self, site: str, job_id: str, spec: dict) -> bool:
        raise NotImplementedError

    def release(self, site: str, job_id: str) -> None:
        raise NotImplementedError


class Scheduler:
    def __init__(self, job_store: JobStore, gateway: ResourceGateway,
                 connected_sites: Callable[[], list],
                 deploy: Callable[[str, list], None],
                 clock=None, retry_interval_s: float = 10.0,
                 max_attempts: int = 30,
                 audit: Optional[Callable[[str, str], None]] = None):
        self.store = job_store
        self.gateway = gateway
        self.connected_sites = connected_sites
        self.deploy = deploy
        self.clock = clock or SystemClock()
        self.retry_interval_s = retry_interval_s
        self.max_attempts = max_attempts
        self._audit = audit or (lambda action, detail: None)
        self._lock = threading.Lock()
        self._reserved: dict = {}  # job_id -> list of sites holding a reservation
        self._stop = threading.Event()
        self._wake = threading.Event()

    # -- queue processing -------------------------------------------------------

    def tick(self) -> None:
        """One scheduling pass over the queue, FIFO."""
        for job_id in self.store.jobs_in_state(QUEUED):
            self._try_schedule(job_id)

    def _targets_for(self, job_id: str) -> Optional[list]:
        definition = self.store.load_definition(job_id)
        connected = sorted(self.connected_sites())
        deploy_map = definition.meta.deploy_map
        if deploy_map:
            targets = sorted(deploy_map)
            if any(site not in connected for site in targets):
                return None
        else:
            targets = connected
        if len(targets) < definition.meta.min_clients:
            return None
        return targets

    def _try_schedule(self, job_id: str) -> None:
        state = self.store.get_state(job_id)
        attempts = state.get("attempts", 0)
        if attempts >= self.max_attempts:
            self.store.update_state(job_id, state=UNSCHEDULABLE,
                                    detail=f"gave up after {attempts} attempts")
            self._audit("job_unschedulable", job_id)
            return

        targets = self._targets_for(job_id)
        definition = self.store.load_definition(job_id)
        spec = definition.meta.resource_spec
        if targets is None:
            self.store.update_state(job_id, attempts=attempts + 1,
                                    detail="waiting for required sites")
            return

        # phase 1: ask everyone, reserve nothing
        accepted = all(self.gateway.check(site, job_id, spec)
                       for site in targets)
        if not accepted:
            self.store.update_state(job_id, attempts=attempts + 1,
                                    detail="a site rejected the resource query")
            self._audit("job_resources_rejected", job_id)
            return

        # phase 2: all-or-nothing reservation
        reserved: list = []
        for site in targets:
            if self.gateway.reserve(site, job_id, spec):
                reserved.append(site)
            else:
                for held in reserved:
                    self.gateway.release(held, job_id)
                self.store.update_state(job_id, attempts=attempts + 1,
                                        detail=f"{site} refused reservation")
                self._audit("job_reservation_rollback", f"{job_id} at {site}")
                return

        with self._lock:
            self._reserved[job_id] = reserved
        self.store.update_state(job_id, state=RUNNING, targets=targets,
                                detail="")
        self._audit("job_scheduled", f"{job_id} -> {','.join(targets)}")
        self.deploy(job_id, targets)

    def job_finished(self, job_id: str) -> None:
        """Release reservations when a job reaches a terminal state."""
        with self._lock:
            sites = self._reserved.pop(job_id, [])
        for site in sites:
            self.gateway.release(site, job_id)
        self._wake.set()

    # -- thread -----------------------------------------------------------------

    def run(self) -> None:
        while not self._stop.is_set():
            try:
                self.tick()
            except Exception as exc:  # noqa: BLE001 - scheduler must survive
                log.warning("scheduler tick failed: %s", exc)
            self._wake.wait(timeout=self.retry_interval_s)
            self._wake.clear()

    def wake(self) -> None:
        self._wake.set()

    def stop(self) -> None:
        self._stop.set()
        self._wake.set()
