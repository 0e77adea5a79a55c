"""Component registry: job configs reference workflows/executors by name."""

from __future__ import annotations

from typing import Callable

_WORKFLOWS: dict = {}
_EXECUTORS: dict = {}


def register_workflow(name: str, factory: Callable) -> None:
    _WORKFLOWS[name] = factory


def register_executor(name: str, factory: Callable) -> None:
    _EXECUTORS[name] = factory


def workflow_types() -> set:
    _ensure_builtins()
    return set(_WORKFLOWS)


def executor_types() -> set:
    _ensure_builtins()
    return set(_EXECUTORS)


def build_workflow(config: dict):
    """Instantiate the workflow named by a server config."""
    _ensure_builtins()
    spec = config.get("workflow", {})
    name = spec.get("type")
    if name not in _WORKFLOWS:
        raise KeyError(f"unknown workflow type {name!r}")
    return _WORKFLOWS[name](spec.get("args", {}))


def build_executor(spec: dict, site_ctx: dict):
    """Instantiate an executor for one site."""
    _ensure_builtins()
    name = spec.get("type")
    if name not in _EXECUTORS:
        raise KeyError(f"unknown executor type {name!r}")
    return _EXECUTORS[name](spec.get("args", {}), site_ctx)


_loaded = False


def _ensure_builtins() -> None:
    global _loaded
    if _loaded:
        return
    _loaded = True
    from .algorithms import components as algo_components
    from .fedstats import workflow as stats_workflow
    from .fedxgboost import workflow as xgb_workflow
    algo_components.register()
    stats_workflow.register()
    xgb_workflow.register()
