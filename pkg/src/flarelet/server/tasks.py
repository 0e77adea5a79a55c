"""Task lifecycle: pull-based assignment tracking with at-most-once dispatch.

A controller call produces a batch of per-client assignments.  Clients poll;
exactly one PENDING assignment per poll flips to DISPATCHED atomically.
Results land back by task id; late or unknown ids are discarded and audited
by the caller, never applied.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from ..core.clock import SystemClock
from ..core.shareable import Shareable


class AssignmentState(str, Enum):
    PENDING = "PENDING"
    DISPATCHED = "DISPATCHED"
    RESULT_RECEIVED = "RESULT_RECEIVED"
    TIMED_OUT = "TIMED_OUT"
    ABORTED = "ABORTED"


TERMINAL_STATES = frozenset({AssignmentState.RESULT_RECEIVED,
                             AssignmentState.TIMED_OUT,
                             AssignmentState.ABORTED})


@dataclass
class Task:
    name: str
    data: Shareable
    timeout_s: float = 60.0
    min_responses: int = 0
    targets: Optional[list] = None

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("task timeout must be positive")
        if self.min_responses < 0:
            raise ValueError("min_responses must be >= 0")


@dataclass
class TaskAssignment:
    task_id: str
    client: str
    state: AssignmentState = AssignmentState.PENDING
    dispatched_at: Optional[float] = None
    completed_at: Optional[float] = None
    result: Optional[Shareable] = None


@dataclass
class TaskBatch:
    seq: int
    task: Task
    assignments: dict = field(default_factory=dict)  # client -> TaskAssignment
    closed: bool = False

    def results(self) -> dict:
        return {a.client: a.result for a in self.assignments.values()
                if a.state is AssignmentState.RESULT_RECEIVED}

    def count_received(self) -> int:
        return sum(1 for a in self.assignments.values()
                   if a.state is AssignmentState.RESULT_RECEIVED)


class TaskManager:
    """Per-job assignment book-keeping; thread-safe."""

    def __init__(self, job_id: str, clock=None,
                 audit: Optional[Callable[[str, str], None]] = None):
        self.job_id = job_id
        self.clock = clock or SystemClock()
        self._audit = audit or (lambda action, detail: None)
        self._lock = threading.Condition()
        self._batches: list = []
        self._by_task_id: dict = {}
        self._seq = 0
        self._aborted = False

    # -- controller side ----------------------------------------------------

    def submit_batch(self, task: Task, clients: list) -> TaskBatch:
        with self._lock:
            if self._aborted:
                raise JobAborted(self.job_id)
            batch = TaskBatch(seq=self._seq, task=task)
            # Deterministic ids: when the task carries a round header a server
            # resuming from a snapshot regenerates the very same ids, so a
            # result computed before the cutover is still honored after it.
            round_header = task.data.headers.get("round")
            label = (f"{task.name}@r{round_header}" if round_header is not None
                     else f"t{self._seq}")
            for client in clients:
                task_id = f"{self.job_id}:{label}.{client}"
                assignment = TaskAssignment(task_id=task_id, client=client)
                batch.assignments[client] = assignment
                self._by_task_id[task_id] = (batch, assignment)
            self._seq += 1
            self._batches.append(batch)
            self._lock.notify_all()
            return batch

    def wait_for(self, batch: TaskBatch, min_responses: int,
                 wait_time_s: float) -> dict:
        """Block until enough results arrived or time ran out, then close."""
        deadline = self.clock.now() + wait_time_s
        with self._lock:
            while True:
                self._expire_locked()
                if self._aborted:
                    self._close_locked(batch)
                    raise JobAborted(self.job_id)
                if batch.count_received() >= min_responses:
                    break
                still_open = any(a.state not in TERMINAL_STATES
                                 for a in batch.assignments.values())
                remaining = deadline - self.clock.now()
                if not still_open or remaining <= 0:
                    break
                self._lock.wait(timeout=min(remaining, 0.2))
            self._close_locked(batch)
            return batch.results()

    def _close_locked(self, batch: TaskBatch) -> None:
        batch.closed = True
        now = self.clock.now()
        for assignment in batch.assignments.values():
            if assignment.state not in TERMINAL_STATES:
                assignment.state = AssignmentState.TIMED_OUT
                assignment.completed_at = now

    def abort(self) -> None:
        with self._lock:
            self._aborted = True
            now = self.clock.now()
            for batch in self._batches:
                batch.closed = True
                for assignment in batch.assignments.values():
                    if assignment.state not in TERMINAL_STATES:
                        assignment.state = AssignmentState.ABORTED
                        assignment.completed_at = now
            self._lock.notify_all()

    @property
    def aborted(self) -> bool:
        return self._aborted

    # -- client-facing side ---------------------------------------------------

    def poll(self, client: str):
        """Atomically dispatch one pending assignment, or None."""
        with self._lock:
            self._expire_locked()
            if self._aborted:
                return None
            for batch in self._batches:
                if batch.closed:
                    continue
                assignment = batch.assignments.get(client)
                if assignment is not None and \
                        assignment.state is AssignmentState.PENDING:
                    assignment.state = AssignmentState.DISPATCHED
                    assignment.dispatched_at = self.clock.now()
                    return assignment, batch.task
            return None

    def submit_result(self, client: str, task_id: str,
                      result: Shareable) -> bool:
        """True when applied; False when discarded (late/unknown/foreign)."""
        with self._lock:
            entry = self._by_task_id.get(task_id)
            if entry is None:
                self._audit("result_discarded", f"unknown task_id {task_id}")
                return False
            batch, assignment = entry
            if assignment.client != client:
                self._audit("result_discarded",
                            f"{task_id} submitted by {client}, "
                            f"assigned to {assignment.client}")
                return False
            if batch.closed or assignment.state is not AssignmentState.DISPATCHED:
                self._audit("result_discarded",
                            f"{task_id} late or duplicate "
                            f"(state={assignment.state.value})")
                return False
            assignment.state = AssignmentState.RESULT_RECEIVED
            assignment.completed_at = self.clock.now()
            assignment.result = result
            self._lock.notify_all()
            return True

    def _expire_locked(self) -> None:
        now = self.clock.now()
        for batch in self._batches:
            if batch.closed:
                continue
            deadline = batch.task.timeout_s
            for assignment in batch.assignments.values():
                if assignment.state is AssignmentState.DISPATCHED and \
                        assignment.dispatched_at is not None and \
                        now - assignment.dispatched_at > deadline:
                    assignment.state = AssignmentState.TIMED_OUT
                    assignment.completed_at = now
                    self._audit("assignment_timeout", assignment.task_id)

    # -- introspection --------------------------------------------------------

    def assignments(self) -> list:
        with self._lock:
            return [a for b in self._batches for a in b.assignments.values()]

    def non_terminal_count(self) -> int:
        with self._lock:
            return sum(1 for b in self._batches
                       for a in b.assignments.values()
                       if a.state not in TERMINAL_STATES)


class JobAborted(RuntimeError):
    pass


class NoClients(RuntimeError):
    pass
