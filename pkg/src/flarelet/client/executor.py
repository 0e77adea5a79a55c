"""Client-side executor contract, bindings and the filtered execution path.

Order of application is fixed: client forced data filters, then job data
filters, the executor, job result filters, and client forced result filters
last, so site policy wraps whatever the job configures.
"""

from __future__ import annotations

import fnmatch
import logging
import threading
from typing import Callable, Optional

from ..core.context import FLContext
from ..core.events import FLComponent
from ..core.shareable import ReturnCode, Shareable
from ..filters.base import apply_chain

log = logging.getLogger("flarelet.executor")


class AbortSignal:
    """Set-once flag executors may observe mid-task."""

    def __init__(self):
        self._event = threading.Event()

    def trigger(self) -> None:
        self._event.set()

    @property
    def triggered(self) -> bool:
        return self._event.is_set()

    def wait(self, timeout: float) -> bool:
        return self._event.wait(timeout)


class Executor(FLComponent):
    def execute(self, task_name: str, shareable: Shareable, ctx: FLContext,
                abort: AbortSignal) -> Shareable:
        raise NotImplementedError


class ExecutorBinding:
    """task-name patterns -> executor, plus the four filter chains."""

    def __init__(self, bindings: list, data_filters=None, result_filters=None,
                 forced_data_filters=None, forced_result_filters=None):
        self._bindings = bindings  # list of (patterns, executor)
        self.data_filters = list(data_filters or [])
        self.result_filters = list(result_filters or [])
        self.forced_data_filters = list(forced_data_filters or [])
        self.forced_result_filters = list(forced_result_filters or [])

    def find(self, task_name: str) -> Optional[Executor]:
        for patterns, executor in self._bindings:
            if any(fnmatch.fnmatchcase(task_name, p) for p in patterns):
                return executor
        return None


def execute_task(binding: ExecutorBinding, task_name: str, data: Shareable,
                 ctx: FLContext, abort: AbortSignal,
                 audit: Optional[Callable[[str, str], None]] = None) -> Shareable:
    """Run one task through the full filter/executor pipeline.

    Never raises: unknown tasks, filter vetoes and executor exceptions all
    come back as return codes.
    """
    audit = audit or (lambda action, detail: None)
    executor = binding.find(task_name)
    if executor is None:
        audit("task_unknown", task_name)
        return Shareable.error(ReturnCode.TASK_UNKNOWN,
                               headers=dict(data.headers))

    filtered = apply_chain(binding.forced_data_filters + binding.data_filters,
                           data, ctx, audit=audit)
    if filtered.return_code is ReturnCode.FILTER_BLOCKED:
        return filtered

    try:
        result = executor.execute(task_name, filtered, ctx, abort)
    except Exception as exc:  # noqa: BLE001 - the loop must survive anything
        log.warning("executor %s failed on %s: %s", executor.id, task_name, exc)
        audit("execution_exception", f"{task_name}: {exc}")
        return Shareable.error(ReturnCode.EXECUTION_EXCEPTION,
                               headers=dict(data.headers))
    if result.return_code is not ReturnCode.OK:
        return result

    return apply_chain(binding.result_filters + binding.forced_result_filters,
                       result, ctx, audit=audit)
