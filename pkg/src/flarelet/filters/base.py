"""Filter contract and chain application.

A filter transforms a Shareable in transit.  Filters are pure given (input,
params, seed); a veto surfaces as return code FILTER_BLOCKED and stops the
chain.  FilterSpec parameters are validated at job-load time so a bad job is
rejected before it runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from ..core.context import FLContext
from ..core.events import FLComponent
from ..core.shareable import ReturnCode, Shareable

TASK_DATA = "TASK_DATA"
TASK_RESULT = "TASK_RESULT"


class FilterConfigError(ValueError):
    pass


class FilterVeto(Exception):
    """Raised by a filter to block the shareable outright."""


class Filter(FLComponent):
    def process(self, shareable: Shareable, ctx: FLContext) -> Shareable:
        raise NotImplementedError


@dataclass
class FilterSpec:
    type: str
    params: dict
    direction: str = TASK_RESULT

    @classmethod
    def from_dict(cls, raw: dict) -> "FilterSpec":
        spec = cls(type=raw.get("type", ""), params=dict(raw.get("params", {})),
                   direction=raw.get("direction", TASK_RESULT))
        if spec.direction not in (TASK_DATA, TASK_RESULT):
            raise FilterConfigError(f"bad filter direction {spec.direction!r}")
        return spec


def apply_chain(filters, shareable: Shareable, ctx: FLContext,
                audit: Optional[Callable[[str, str], None]] = None) -> Shareable:
    """Run filters in order; a veto or blocked result short-circuits."""
    current = shareable
    for filt in filters:
        try:
            current = filt.process(current, ctx)
        except FilterVeto as veto:
            if audit is not None:
                audit("filter_blocked", f"{filt.id}: {veto}")
            return Shareable.error(ReturnCode.FILTER_BLOCKED,
                                   headers=dict(shareable.headers))
        if current.return_code is ReturnCode.FILTER_BLOCKED:
            if audit is not None:
                audit("filter_blocked", filt.id)
            return current
    return current
