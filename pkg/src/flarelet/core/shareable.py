"""Shareable: the headered envelope every party exchanges.

The Shareable carries string headers (task name, task id, peer identity, ...),
a return code, and an optional serialized DXO payload.  Headers round-trip
through serialization unchanged; a payload present on an OK shareable must
decode to a valid DXO.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional

from .dxo import Dxo, DecodeError, dxo_decode, dxo_encode

# Well-known header keys.
H_TASK_NAME = "task_name"
H_TASK_ID = "task_id"
H_PEER = "peer"
H_JOB_ID = "job_id"
H_ROUND = "round"


class ReturnCode(str, Enum):
    OK = "OK"
    TASK_UNKNOWN = "TASK_UNKNOWN"
    EXECUTION_EXCEPTION = "EXECUTION_EXCEPTION"
    NOT_READY = "NOT_READY"
    FILTER_BLOCKED = "FILTER_BLOCKED"


class Shareable:
    __slots__ = ("headers", "return_code", "payload")

    def __init__(self, headers=None, return_code=ReturnCode.OK,
                 payload: Optional[bytes] = None):
        self.headers: dict = dict(headers) if headers else {}
        self.return_code = ReturnCode(return_code)
        self.payload = payload

    @classmethod
    def from_dxo(cls, dxo: Dxo, headers=None,
                 return_code=ReturnCode.OK) -> "Shareable":
        return cls(headers=headers, return_code=return_code,
                   payload=dxo_encode(dxo))

    @classmethod
    def error(cls, return_code: ReturnCode, headers=None) -> "Shareable":
        return cls(headers=headers, return_code=return_code, payload=None)

    def dxo(self) -> Optional[Dxo]:
        """Decode the payload, or None when the shareable carries none."""
        if self.payload is None:
            return None
        return dxo_decode(self.payload)

    def with_headers(self, extra: dict) -> "Shareable":
        merged = dict(self.headers)
        merged.update({k: str(v) for k, v in extra.items()})
        return Shareable(merged, self.return_code, self.payload)

    def validate(self) -> None:
        """Enforce the code/payload invariant; raises on violation."""
        for key, value in self.headers.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise ValueError("shareable headers must map str -> str")
        if self.payload is not None:
            if self.return_code is ReturnCode.OK:
                self.dxo()
            else:
                try:
                    self.dxo()
                except DecodeError:
                    return
                raise ValueError(
                    f"return code {self.return_code.value} with a decodable payload")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Shareable):
            return NotImplemented
        return (self.headers == other.headers
                and self.return_code == other.return_code
                and self.payload == other.payload)

    def __repr__(self) -> str:
        nbytes = len(self.payload) if self.payload else 0
        return (f"Shareable(rc={self.return_code.value}, headers={self.headers}, "
                f"payload={nbytes}B)")
