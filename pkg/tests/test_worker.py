"""Worker-engine behavior: filter chain order, fault tolerance, survival."""

import json
import time

import numpy as np
import pytest

from flarelet.client import (AbortSignal, ClientConfig, ExecutorBinding,
                             execute_task)
from flarelet.client.executor import Executor
from flarelet.core import Dxo, DxoKind, FLContext, ReturnCode, Shareable
from flarelet.filters.base import Filter, FilterVeto
from flarelet.simulator import run_federation
from tests.test_federation import sag_job


class TagFilter(Filter):
    """Appends its tag to a meta trail so chain order is observable."""

    def __init__(self, tag):
        super().__init__(f"tag-{tag}")
        self.tag = tag

    def process(self, shareable, ctx):
        dxo = shareable.dxo()
        trail = dxo.meta.get("trail", "")
        dxo.meta["trail"] = f"{trail}>{self.tag}" if trail else self.tag
        return Shareable.from_dxo(dxo, headers=dict(shareable.headers))


class TrailEcho(Executor):
    def __init__(self):
        super().__init__("trail-echo")

    def execute(self, task_name, shareable, ctx, abort):
        dxo = shareable.dxo()
        dxo.meta["trail"] = dxo.meta.get("trail", "") + ">exec"
        return Shareable.from_dxo(dxo, headers=dict(shareable.headers))


class VetoFilter(Filter):
    def process(self, shareable, ctx):
        raise FilterVeto("site policy forbids this payload")


class Boom(Executor):
    def __init__(self):
        super().__init__("boom")

    def execute(self, task_name, shareable, ctx, abort):
        raise ValueError("kaboom")


def payload():
    return Shareable.from_dxo(Dxo(DxoKind.WEIGHT_DIFF,
                                  data={"w": np.ones(3)}))


def test_filter_chain_order_forced_outermost():
    binding = ExecutorBinding(
        [(["train*"], TrailEcho())],
        data_filters=[TagFilter("job_data")],
        result_filters=[TagFilter("job_res")],
        forced_data_filters=[TagFilter("forced_data")],
        forced_result_filters=[TagFilter("forced_res")])
    out = execute_task(binding, "train", payload(), FLContext(), AbortSignal())
    assert out.dxo().meta["trail"] == \
        "forced_data>job_data>exec>job_res>forced_res"


def test_unknown_task_returns_task_unknown():
    binding = ExecutorBinding([(["train"], TrailEcho())])
    out = execute_task(binding, "mystery", payload(), FLContext(),
                       AbortSignal())
    assert out.return_code is ReturnCode.TASK_UNKNOWN


def test_identity_executor_no_filters_roundtrip():
    from flarelet.algorithms.components import IdentityExecutor
    binding = ExecutorBinding([(["*"], IdentityExecutor({}, {}))])
    data = payload()
    out = execute_task(binding, "anything", data, FLContext(), AbortSignal())
    assert out.payload == data.payload


def test_executor_exception_becomes_return_code():
    audits = []
    binding = ExecutorBinding([(["*"], Boom())])
    out = execute_task(binding, "train", payload(), FLContext(), AbortSignal(),
                       audit=lambda action, detail: audits.append(action))
    assert out.return_code is ReturnCode.EXECUTION_EXCEPTION
    assert "execution_exception" in audits


def test_forced_veto_cannot_be_bypassed_by_job_config():
    binding = ExecutorBinding(
        [(["*"], TrailEcho())],
        data_filters=[TagFilter("job")],
        forced_data_filters=[VetoFilter("forced")])
    out = execute_task(binding, "train", payload(), FLContext(), AbortSignal())
    assert out.return_code is ReturnCode.FILTER_BLOCKED


def test_thousand_iterations_of_faults_never_kill_the_path():
    rng = np.random.default_rng(0)
    good = ExecutorBinding([(["*"], TrailEcho())])
    bad = ExecutorBinding([(["*"], Boom())])
    veto = ExecutorBinding([(["*"], TrailEcho())],
                           forced_data_filters=[VetoFilter("v")])
    exits = 0
    for i in range(1000):
        binding = (good, bad, veto)[rng.integers(0, 3)]
        try:
            out = execute_task(binding, "t", payload(), FLContext(),
                               AbortSignal())
            assert out.return_code in (ReturnCode.OK,
                                       ReturnCode.EXECUTION_EXCEPTION,
                                       ReturnCode.FILTER_BLOCKED)
        except Exception:
            exits += 1
    assert exits == 0


def test_client_loop_survives_failing_executor(tmp_path):
    # a job bound to the failing executor: job FAILS but clients stay up
    job = {
        "meta.json": json.dumps({"name": "faulty", "min_clients": 2}).encode(),
        "app/config_server.json": json.dumps({"workflow": {
            "type": "scatter_and_gather",
            "args": {"rounds": 1, "min_responses": 2,
                     "round_wait_s": 2,
                     "dataset": {"train_n": 100, "test_n": 50, "dim": 4,
                                 "classes": 2, "seed": 0},
                     "train": {"hidden": 4, "batch_size": 16,
                               "seed": 0}}}}).encode(),
        "app/config_client.json": json.dumps({"executors": [
            {"tasks": ["*"], "executor": {"type": "failing_executor"}}]}).encode(),
    }
    out = run_federation(job, 2, tmp_path, job_timeout_s=60)
    assert out.state["state"] == "FAILED"
    # executor exceptions were recorded, not fatal
    assert any(r["action"] == "result_discarded" or
               r["action"] == "job_failed" for r in out.audit_records)


def test_abort_signal_is_monotonic():
    signal = AbortSignal()
    assert not signal.triggered
    signal.trigger()
    assert signal.triggered
    signal.trigger()
    assert signal.triggered


def test_policy_hot_reload_changes_capacity(tmp_path):
    policy_path = tmp_path / "client.json"
    policy_path.write_text(json.dumps({"capacities": {"gpu": 2}}))
    cfg = ClientConfig.load(policy_path)
    from flarelet.client.runtime import ClientRuntime
    from flarelet.security import provision
    kits = provision({"name": "p", "parties": [
        {"name": "c1", "org": "o", "party_type": "client"}]})
    runtime = ClientRuntime(kits["c1"], cfg, work_dir=tmp_path / "w")
    assert runtime.resources.capacities == {"gpu": 2}
    assert runtime.resources.check("J1", {"gpu": 2})
    assert runtime.resources.reserve("J1", {"gpu": 2})

    time.sleep(0.02)
    policy_path.write_text(json.dumps({"capacities": {"gpu": 1}}))
    runtime._maybe_reload_policy()
    # existing reservations unaffected; new checks see the lower capacity
    assert runtime.resources.reservations == {"J1": {"gpu": 2}}
    assert not runtime.resources.check("J2", {"gpu": 1})
    runtime.resources.release("J1")
    assert runtime.resources.check("J2", {"gpu": 1})
