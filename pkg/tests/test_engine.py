"""Task lifecycle, controller patterns, resources, scheduler: no sockets."""

import threading
import time

import numpy as np
import pytest

from flarelet.client import ResourceManager
from flarelet.core import Dxo, DxoKind, ReturnCode, Shareable
from flarelet.server import (AssignmentState, ControllerContext, JobAborted,
                             JobStore, NoClients, QUEUED, RUNNING, Scheduler,
                             SnapshotStore, Task, TaskManager, UNSCHEDULABLE)
from flarelet.server.scheduler import ResourceGateway


def sh(value=0.0):
    return Shareable.from_dxo(Dxo(DxoKind.METRICS,
                                  data={"v": np.array([value])}))


def make_ctx(clients, audits=None):
    audit_log = audits if audits is not None else []
    record = lambda action, detail="": audit_log.append((action, detail))
    tm = TaskManager("J1", audit=record)
    ctx = ControllerContext("J1", tm, lambda: list(clients), audit=record)
    return ctx, tm


# ---------------------------------------------------------------------------
# poll / dispatch


def test_poll_no_pending_returns_none():
    _, tm = make_ctx(["a"])
    assert tm.poll("a") is None


def test_concurrent_polls_dispatch_exactly_once():
    _, tm = make_ctx(["a"])
    batch = tm.submit_batch(Task("t", sh(), timeout_s=5), ["a"])
    wins = []
    barrier = threading.Barrier(8)

    def race():
        barrier.wait()
        got = tm.poll("a")
        if got is not None:
            wins.append(got)

    threads = [threading.Thread(target=race) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(wins) == 1
    assert batch.assignments["a"].state is AssignmentState.DISPATCHED


def test_broadcast_and_wait_happy_path():
    ctx, tm = make_ctx(["a", "b", "c", "d"])

    def clients_respond():
        for site in ("a", "b", "c", "d"):
            while True:
                polled = tm.poll(site)
                if polled:
                    assignment, task = polled
                    tm.submit_result(site, assignment.task_id, sh(1.0))
                    break
                time.sleep(0.005)

    thread = threading.Thread(target=clients_respond)
    thread.start()
    results = ctx.broadcast_and_wait("t", sh(), wait_time_s=5, min_responses=4)
    thread.join()
    assert sorted(results) == ["a", "b", "c", "d"]
    assert all(r.return_code is ReturnCode.OK for r in results.values())


def test_broadcast_min_responses_with_silent_client():
    ctx, tm = make_ctx(["a", "b", "c", "d"])

    def responders():
        for site in ("a", "b", "c"):  # d never polls
            polled = None
            while polled is None:
                polled = tm.poll(site)
                time.sleep(0.002)
            tm.submit_result(site, polled[0].task_id, sh())

    thread = threading.Thread(target=responders)
    thread.start()
    results = ctx.broadcast_and_wait("t", sh(), wait_time_s=3, min_responses=3)
    thread.join()
    assert len(results) == 3
    states = [a.state for a in tm.assignments()]
    assert states.count(AssignmentState.TIMED_OUT) == 1


def test_broadcast_zero_min_zero_wait_returns_empty():
    ctx, _ = make_ctx(["a"])
    assert ctx.broadcast_and_wait("t", sh(), wait_time_s=0,
                                  min_responses=0) == {}


def test_no_clients_error():
    ctx, _ = make_ctx([])
    with pytest.raises(NoClients):
        ctx.broadcast_and_wait("t", sh(), wait_time_s=1)


def test_late_result_discarded_and_audited():
    audits = []
    ctx, tm = make_ctx(["a"], audits)
    batch = tm.submit_batch(Task("t", sh(), timeout_s=5), ["a"])
    polled = tm.poll("a")
    tm.wait_for(batch, min_responses=0, wait_time_s=0)  # closes the window
    assert tm.submit_result("a", polled[0].task_id, sh()) is False
    assert any("result_discarded" in action for action, _ in audits)


def test_result_for_unknown_task_id_discarded():
    audits = []
    _, tm = make_ctx(["a"], audits)
    assert tm.submit_result("a", "J1:t9.a", sh()) is False
    assert audits


def test_duplicate_submission_is_discarded():
    _, tm = make_ctx(["a"])
    batch = tm.submit_batch(Task("t", sh(), timeout_s=5), ["a"])
    polled = tm.poll("a")
    assert tm.submit_result("a", polled[0].task_id, sh(1)) is True
    assert tm.submit_result("a", polled[0].task_id, sh(2)) is False
    assert batch.results()["a"].dxo().data["v"][0] == 1


def test_wrong_client_result_rejected():
    _, tm = make_ctx(["a", "b"])
    tm.submit_batch(Task("t", sh(), timeout_s=5), ["a"])
    polled = tm.poll("a")
    assert tm.submit_result("b", polled[0].task_id, sh()) is False


# ---------------------------------------------------------------------------
# send / relay patterns


def run_echo_clients(tm, sites, transform=None, rounds=100):
    stop = threading.Event()

    def loop():
        while not stop.is_set():
            for site in sites:
                polled = tm.poll(site)
                if polled:
                    assignment, task = polled
                    dxo = task.data.dxo()
                    value = float(np.asarray(dxo.data["v"])[0])
                    out = transform(site, value) if transform else value
                    tm.submit_result(site, assignment.task_id, sh(out))
            time.sleep(0.002)

    thread = threading.Thread(target=loop, daemon=True)
    thread.start()
    return stop, thread


def test_relay_increments_through_three_clients():
    ctx, tm = make_ctx(["A", "B", "C"])
    stop, thread = run_echo_clients(tm, ["A", "B", "C"],
                                    transform=lambda s, v: v + 1)
    final = ctx.relay_and_wait("inc", sh(0.0), ["A", "B", "C"],
                               per_hop_wait_s=3)
    stop.set()
    thread.join(timeout=2)
    assert final.dxo().data["v"][0] == 3.0


def test_single_element_relay_equals_send_and_wait():
    ctx, tm = make_ctx(["A"])
    stop, thread = run_echo_clients(tm, ["A"], transform=lambda s, v: v + 10)
    relayed = ctx.relay_and_wait("inc", sh(1.0), ["A"], per_hop_wait_s=3)
    sent = ctx.send_and_wait("inc", sh(1.0), "A", wait_time_s=3)
    stop.set()
    thread.join(timeout=2)
    assert relayed.dxo().data["v"][0] == sent.dxo().data["v"][0] == 11.0


def test_relay_skips_offline_client():
    live = ["A", "C"]
    ctx, tm = make_ctx(live)
    stop, thread = run_echo_clients(tm, ["A", "C"], transform=lambda s, v: v + 1)
    final = ctx.relay_and_wait("inc", sh(0.0), ["A", "C"], per_hop_wait_s=3)
    stop.set()
    thread.join(timeout=2)
    assert final.dxo().data["v"][0] == 2.0


def test_abort_moves_all_pending_to_aborted():
    ctx, tm = make_ctx(["a", "b"])
    tm.submit_batch(Task("t", sh(), timeout_s=60), ["a", "b"])
    tm.poll("a")  # one dispatched, one pending
    tm.abort()
    states = {a.client: a.state for a in tm.assignments()}
    assert states["a"] is AssignmentState.ABORTED
    assert states["b"] is AssignmentState.ABORTED
    with pytest.raises(JobAborted):
        ctx.broadcast_and_wait("t", sh(), wait_time_s=1)


def test_abort_quiescence_no_state_leaves_terminal():
    _, tm = make_ctx(["a"])
    batch = tm.submit_batch(Task("t", sh(), timeout_s=60), ["a"])
    polled = tm.poll("a")
    tm.abort()
    assert tm.poll("a") is None
    assert tm.submit_result("a", polled[0].task_id, sh()) is False
    assert batch.assignments["a"].state is AssignmentState.ABORTED


# ---------------------------------------------------------------------------
# Resource manager


def test_resource_check_and_reserve_flow():
    rm = ResourceManager({"gpu": 2})
    assert rm.check("J1", {"gpu": 1})
    assert rm.reserve("J1", {"gpu": 1})
    assert rm.check("J2", {"gpu": 1})
    assert rm.reserve("J2", {"gpu": 1})
    assert not rm.check("J3", {"gpu": 1})
    rm.release("J1")
    assert rm.check("J3", {"gpu": 1})


def test_reserve_without_prior_check_rejected():
    rm = ResourceManager({"gpu": 2})
    assert not rm.reserve("J1", {"gpu": 1})
    assert rm.check("J1", {"gpu": 1})
    assert not rm.reserve("J1", {"gpu": 2})  # different spec than accepted


def test_capacity_lowered_at_runtime():
    rm = ResourceManager({"gpu": 2})
    assert rm.check("J1", {"gpu": 2}) and rm.reserve("J1", {"gpu": 2})
    rm.set_capacity("gpu", 1)
    # existing reservation unaffected, new checks use the new capacity
    assert rm.reservations == {"J1": {"gpu": 2}}
    assert not rm.check("J2", {"gpu": 1})
    rm.release("J1")
    assert rm.check("J2", {"gpu": 1})


def test_zero_resource_job_always_accepted():
    rm = ResourceManager({})
    assert rm.check("J1", {})
    assert rm.reserve("J1", {})


# ---------------------------------------------------------------------------
# Scheduler (direct gateway, no sockets)


class DirectGateway(ResourceGateway):
    def __init__(self, managers, fail_check=None):
        self.managers = managers
        self.fail_check = fail_check or set()

    def check(self, site, job_id, spec):
        if site in self.fail_check:
            return False
        return self.managers[site].check(job_id, spec)

    def reserve(self, site, job_id, spec):
        return self.managers[site].reserve(job_id, spec)

    def release(self, site, job_id):
        self.managers[site].release(job_id)


def job_files(name="job", gpu=1, min_clients=2):
    import json
    return {
        "meta.json": json.dumps({
            "name": name, "min_clients": min_clients,
            "resource_spec": {"gpu": gpu} if gpu else {}}).encode(),
        "app/config_server.json": json.dumps({
            "workflow": {"type": "scatter_and_gather",
                         "args": {"rounds": 1}}}).encode(),
        "app/config_client.json": json.dumps({
            "executors": [{"tasks": ["*"],
                           "executor": {"type": "identity_executor"}}]}).encode(),
    }


def make_sched(tmp_path, managers, deployed, **kwargs):
    store = JobStore(tmp_path / "jobs")
    gateway = kwargs.pop("gateway", DirectGateway(managers))
    sched = Scheduler(store, gateway, lambda: list(managers),
                      lambda job_id, targets: deployed.append((job_id, targets)),
                      retry_interval_s=0.01, **kwargs)
    return store, sched


def test_scheduler_two_run_one_queued_then_scheduled(tmp_path):
    managers = {"c1": ResourceManager({"gpu": 2}),
                "c2": ResourceManager({"gpu": 2})}
    deployed = []
    store, sched = make_sched(tmp_path, managers, deployed)
    ids = [store.submit(job_files(f"job{i}"), {"name": "alice"})
           for i in range(3)]
    sched.tick()
    assert [job for job, _ in deployed] == ids[:2]
    assert store.get_state(ids[2])["state"] == QUEUED
    # conservation: never over capacity
    for rm in managers.values():
        assert rm.reserved_total().get("gpu", 0) <= rm.capacities["gpu"]
    # a job finishes: the third schedules on the next tick
    store.update_state(ids[0], state="DONE")
    sched.job_finished(ids[0])
    sched.tick()
    assert deployed[-1][0] == ids[2]


def test_scheduler_zero_resource_job_schedules_despite_reservations(tmp_path):
    managers = {"c1": ResourceManager({"gpu": 1}),
                "c2": ResourceManager({"gpu": 1})}
    deployed = []
    store, sched = make_sched(tmp_path, managers, deployed)
    big = store.submit(job_files("big", gpu=1), {"name": "a"})
    free = store.submit(job_files("free", gpu=0), {"name": "a"})
    sched.tick()
    assert {job for job, _ in deployed} == {big, free}


def test_scheduler_rejection_leaves_no_partial_reservation(tmp_path):
    managers = {"c1": ResourceManager({"gpu": 2}),
                "c2": ResourceManager({"gpu": 2})}
    deployed = []
    store, sched = make_sched(
        tmp_path, managers, deployed,
        gateway=DirectGateway(managers, fail_check={"c2"}))
    job = store.submit(job_files(), {"name": "a"})
    sched.tick()
    assert deployed == []
    assert store.get_state(job)["state"] == QUEUED
    assert managers["c1"].reserved_total() == {}
    assert managers["c2"].reserved_total() == {}


def test_scheduler_unschedulable_after_max_attempts(tmp_path):
    managers = {"c1": ResourceManager({"gpu": 0}),
                "c2": ResourceManager({"gpu": 0})}
    deployed = []
    store, sched = make_sched(tmp_path, managers, deployed, max_attempts=3)
    job = store.submit(job_files(gpu=5), {"name": "a"})
    for _ in range(5):
        sched.tick()
    assert store.get_state(job)["state"] == UNSCHEDULABLE
    assert deployed == []


# ---------------------------------------------------------------------------
# Snapshot store


def test_snapshot_roundtrip_and_latest(tmp_path):
    store = SnapshotStore(tmp_path)
    store.save("J1", 1, {"round": 1})
    store.save("J1", 3, {"round": 3})
    store.save("J1", 2, {"round": 2})
    seq, state = store.load_latest("J1")
    assert seq == 3 and state == {"round": 3}


def test_snapshot_corruption_detected(tmp_path):
    store = SnapshotStore(tmp_path)
    store.save("J1", 1, {"round": 1})
    path = store.save("J1", 2, {"round": 2})
    raw = path.read_text().replace('"round": 2', '"round": 9')
    path.write_text(raw)
    seq, state = store.load_latest("J1")  # falls back to the intact one
    assert seq == 1 and state == {"round": 1}


def test_snapshot_missing_job(tmp_path):
    assert SnapshotStore(tmp_path).load_latest("nope") is None
