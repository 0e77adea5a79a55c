"""FLContext: scoped property store passed between components of one job.

Three scopes with shadowing EPHEMERAL > JOB > RUN.  Reads of absent keys
return the ABSENT marker, never a default.  EPHEMERAL entries are dropped by
serialization; JOB/RUN entries survive across task interactions.
"""

from __future__ import annotations

from enum import Enum


class Scope(str, Enum):
    EPHEMERAL = "EPHEMERAL"
    JOB = "JOB"
    RUN = "RUN"


class _Absent:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "<ABSENT>"

    def __bool__(self):
        return False


ABSENT = _Absent()

_SHADOW_ORDER = (Scope.EPHEMERAL, Scope.JOB, Scope.RUN)


class FLContext:
    def __init__(self, identity: str = "", job_id: str = ""):
        self.identity = identity
        self.job_id = job_id
        self._props = {scope: {} for scope in Scope}

    def put(self, scope: Scope, key: str, value) -> None:
        if not key:
            raise ValueError("context keys must be non-empty")
        self._props[Scope(scope)][key] = value

    def get(self, key: str):
        """Most recently put value under shadowing order, else ABSENT."""
        for scope in _SHADOW_ORDER:
            if key in self._props[scope]:
                return self._props[scope][key]
        return ABSENT

    def get_scope(self, scope: Scope, key: str):
        return self._props[Scope(scope)].get(key, ABSENT)

    def remove(self, scope: Scope, key: str) -> None:
        self._props[Scope(scope)].pop(key, None)

    def to_dict(self) -> dict:
        """Serializable view; EPHEMERAL entries never leave the process."""
        return {
            "identity": self.identity,
            "job_id": self.job_id,
            "props": {
                Scope.JOB.value: dict(self._props[Scope.JOB]),
                Scope.RUN.value: dict(self._props[Scope.RUN]),
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FLContext":
        ctx = cls(identity=raw.get("identity", ""), job_id=raw.get("job_id", ""))
        props = raw.get("props", {})
        for scope in (Scope.JOB, Scope.RUN):
            ctx._props[scope].update(props.get(scope.value, {}))
        return ctx
