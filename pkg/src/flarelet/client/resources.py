"""Client resource manager: capacity reporting, reservation, release.

A reservation is only granted after a successful check in the same exchange
(the pending-accept token), and the conservation invariant
sum(reservations) <= capacity holds per resource at every instant.
Capacities may change at runtime; existing reservations are untouched.
"""

from __future__ import annotations

import threading


class ResourceManager:
    def __init__(self, capacities: dict = None):
        self._lock = threading.Lock()
        self._capacities = dict(capacities or {})
        self._reservations: dict = {}  # job_id -> spec
        self._pending: dict = {}  # job_id -> accepted spec

    def _available_locked(self) -> dict:
        used: dict = {}
        for spec in self._reservations.values():
            for resource, quantity in spec.items():
                used[resource] = used.get(resource, 0) + quantity
        return {resource: self._capacities.get(resource, 0) - used.get(resource, 0)
                for resource in set(self._capacities) | set(used)}

    def _fits_locked(self, spec: dict) -> bool:
        available = self._available_locked()
        return all(quantity <= available.get(resource, 0)
                   for resource, quantity in spec.items())

    def check(self, job_id: str, spec: dict) -> bool:
        """Accept iff the spec fits right now; remembers the accept token."""
        if any(q < 0 for q in spec.values()):
            return False
        with self._lock:
            if self._fits_locked(spec):
                self._pending[job_id] = dict(spec)
                return True
            self._pending.pop(job_id, None)
            return False

    def reserve(self, job_id: str, spec: dict) -> bool:
        """Commit a prior accept; rejected without one or if capacity moved."""
        with self._lock:
            pending = self._pending.pop(job_id, None)
            if pending is None or pending != dict(spec):
                return False
            if not self._fits_locked(spec):
                return False
            self._reservations[job_id] = dict(spec)
            return True

    def release(self, job_id: str) -> None:
        with self._lock:
            self._reservations.pop(job_id, None)
            self._pending.pop(job_id, None)

    def set_capacity(self, resource: str, quantity: float) -> None:
        with self._lock:
            self._capacities[resource] = quantity

    def set_capacities(self, capacities: dict) -> None:
        with self._lock:
            self._capacities = dict(capacities)

    @property
    def capacities(self) -> dict:
        with self._lock:
            return dict(self._capacities)

    @property
    def reservations(self) -> dict:
        with self._lock:
            return {job: dict(spec) for job, spec in self._reservations.items()}

    def reserved_total(self) -> dict:
        with self._lock:
            used: dict = {}
            for spec in self._reservations.values():
                for resource, quantity in spec.items():
                    used[resource] = used.get(resource, 0) + quantity
            return used
