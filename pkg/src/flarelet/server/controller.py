"""Controller-side interaction patterns over the task manager.

Workflows program against this context: broadcast / send / relay, each in a
waiting flavor, plus events, metrics, audit and snapshot hooks.  The context
never touches sockets; the runtime feeds it polls and results.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

from ..core.context import FLContext
from ..core.events import Event, EventBus, EventType, FLComponent
from ..core.shareable import Shareable
from .tasks import JobAborted, NoClients, Task, TaskManager

log = logging.getLogger("flarelet.controller")


class ControllerContext:
    def __init__(self, job_id: str, task_manager: TaskManager,
                 live_clients: Callable[[], list],
                 bus: Optional[EventBus] = None,
                 audit: Optional[Callable[..., None]] = None,
                 snapshot_hook: Optional[Callable[[dict], None]] = None,
                 metric_hook: Optional[Callable[[dict], None]] = None):
        self.job_id = job_id
        self.tasks = task_manager
        self._live_clients = live_clients
        self.bus = bus or EventBus()
        self._audit = audit or (lambda action, detail="", **kw: None)
        self._snapshot_hook = snapshot_hook
        self._metric_hook = metric_hook
        self.fl_ctx = FLContext(identity="server", job_id=job_id)

    # -- client view ----------------------------------------------------------

    def live_clients(self) -> list:
        return sorted(self._live_clients())

    def _resolve_targets(self, targets) -> list:
        live = self.live_clients()
        if targets is None:
            if not live:
                raise NoClients(f"job {self.job_id}: no live clients")
            return live
        unknown = [t for t in targets if t not in live]
        if unknown:
            raise NoClients(f"job {self.job_id}: unknown/offline targets {unknown}")
        return list(targets)

    # -- interaction patterns ---------------------------------------------------

    def broadcast_and_wait(self, name: str, data: Shareable,
                           wait_time_s: float, min_responses: int = 0,
                           timeout_s: Optional[float] = None,
                           targets: Optional[list] = None) -> dict:
        """Task to many clients; returns {client: result} when enough arrive."""
        clients = self._resolve_targets(targets)
        task = Task(name=name, data=data,
                    timeout_s=timeout_s or max(wait_time_s, 1e-3),
                    min_responses=min_responses, targets=clients)
        batch = self.tasks.submit_batch(task, clients)
        results = self.tasks.wait_for(batch, min_responses, wait_time_s)
        self._audit("task_window_closed",
                    f"{name}: {len(results)}/{len(clients)} results")
        return results

    def broadcast(self, name: str, data: Shareable, timeout_s: float = 60.0,
                  targets: Optional[list] = None):
        """No-wait broadcast; results surface later via the batch object."""
        clients = self._resolve_targets(targets)
        task = Task(name=name, data=data, timeout_s=timeout_s, targets=clients)
        return self.tasks.submit_batch(task, clients)

    def send_and_wait(self, name: str, data: Shareable, target: str,
                      wait_time_s: float) -> Optional[Shareable]:
        results = self.broadcast_and_wait(name, data, wait_time_s,
                                          min_responses=1, targets=[target])
        return results.get(target)

    def relay_and_wait(self, name: str, data: Shareable, order: list,
                       per_hop_wait_s: float) -> Optional[Shareable]:
        """Visit clients sequentially, each receiving the previous result.

        A client that times out or drops is skipped (audited) and the relay
        continues with the last good payload.
        """
        self._resolve_targets(order)
        current = data
        for client in order:
            if self.tasks.aborted:
                raise JobAborted(self.job_id)
            if client not in self.live_clients():
                self._audit("relay_skip", f"{name}: {client} offline")
                continue
            result = self.send_and_wait(name, current, client, per_hop_wait_s)
            if result is None:
                self._audit("relay_skip", f"{name}: {client} no result")
                continue
            current = result
        return current

    # -- events / metrics / snapshots -----------------------------------------

    def fire(self, event_type: EventType, data: Optional[dict] = None) -> None:
        self.bus.fire(Event(event_type, data or {}, origin=self.job_id),
                      self.fl_ctx)

    def log_metric(self, payload: dict) -> None:
        self.fire(EventType.METRIC_LOGGED, payload)
        if self._metric_hook is not None:
            self._metric_hook(payload)

    def audit(self, action: str, detail: str = "") -> None:
        self._audit(action, detail)

    def save_snapshot(self, state: dict) -> None:
        if self._snapshot_hook is not None:
            self._snapshot_hook(state)


class Workflow(FLComponent):
    """Server-side control logic for one job.

    Subclasses implement run(); to survive a server cutover they also expose
    their cursor via get_state()/restore_state().
    """

    def __init__(self, component_id: str = ""):
        super().__init__(component_id)

    def run(self, ctx: ControllerContext) -> dict:
        raise NotImplementedError

    def get_state(self) -> dict:
        return {}

    def restore_state(self, state: dict) -> None:
        pass
