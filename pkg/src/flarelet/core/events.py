"""Event bus and the FLComponent contract.

Components register on a bus; firing an event invokes every registered
handler exactly once, in registration order, on the firing thread.  Handler
exceptions are caught and audited so one bad listener cannot starve the rest.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .context import FLContext

log = logging.getLogger("flarelet.events")


class EventType(str, Enum):
    START_RUN = "START_RUN"
    END_RUN = "END_RUN"
    BEFORE_AGGREGATION = "BEFORE_AGGREGATION"
    AFTER_AGGREGATION = "AFTER_AGGREGATION"
    BEST_MODEL_SELECTED = "BEST_MODEL_SELECTED"
    BEFORE_TASK_EXECUTION = "BEFORE_TASK_EXECUTION"
    AFTER_TASK_EXECUTION = "AFTER_TASK_EXECUTION"
    METRIC_LOGGED = "METRIC_LOGGED"
    JOB_SCHEDULED = "JOB_SCHEDULED"
    SERVER_CUTOVER = "SERVER_CUTOVER"


def utc_millis() -> int:
    return int(time.time() * 1000)


@dataclass
class Event:
    type: EventType
    data: dict = field(default_factory=dict)
    origin: str = ""
    timestamp: int = field(default_factory=utc_millis)


class FLComponent:
    """Base contract for controllers, executors, filters and aggregators."""

    def __init__(self, component_id: str = ""):
        self.id = component_id or type(self).__name__
        self.logger = logging.getLogger(f"flarelet.{self.id}")

    def handle_event(self, event: Event, ctx: FLContext) -> None:
        """Override to react to bus events; the default ignores them."""

    def log_info(self, msg: str) -> None:
        self.logger.info(msg)

    def log_warning(self, msg: str) -> None:
        self.logger.warning(msg)


class EventBus:
    def __init__(self, audit: Optional[Callable[[str, str], None]] = None):
        self._handlers: list[FLComponent] = []
        # audit(action, detail) is called when a handler raises
        self._audit = audit

    def register(self, component: FLComponent) -> None:
        self._handlers.append(component)

    @property
    def handlers(self) -> tuple:
        return tuple(self._handlers)

    def fire(self, event: Event, ctx: FLContext) -> None:
        for handler in list(self._handlers):
            try:
                handler.handle_event(event, ctx)
            except Exception as exc:  # noqa: BLE001 - isolation is the contract
                log.warning("handler %s failed on %s: %s",
                            handler.id, event.type.value, exc)
                if self._audit is not None:
                    self._audit("event_handler_error",
                                f"{handler.id}:{event.type.value}:{exc}")
