"""Overseer promotion rules and full server failover with job resume."""

import json
import threading
import time

import pytest

from flarelet.core.clock import ManualClock
from flarelet.ha import ACTIVE, DEAD, Overseer, OverseerServer, STANDBY
from flarelet.security import provision
from flarelet.server.runtime import FederatedServer
from flarelet.simulator import (fast_client_config, fast_settings,
                                simulation_project)
from flarelet.client.runtime import ClientRuntime
from tests.test_federation import sag_job

# ---------------------------------------------------------------------------
# Overseer table (controlled clock)


def test_single_server_becomes_active_generation_1():
    clock = ManualClock()
    overseer = Overseer(clock=clock, heartbeat_interval_s=5)
    view = overseer.heartbeat("s1", "server", "tcp://a:1")
    assert view == {"active": "tcp://a:1", "gen": 1}


def test_promotion_within_four_heartbeat_periods():
    clock = ManualClock()
    overseer = Overseer(clock=clock, heartbeat_interval_s=5)
    overseer.heartbeat("s1", "server", "tcp://a:1")
    overseer.heartbeat("s2", "server", "tcp://b:2")
    assert overseer.view()["active"] == "tcp://a:1"

    # s1 dies; s2 keeps beating every 5 s
    for beat in range(4):
        clock.advance(5)
        view = overseer.heartbeat("s2", "server", "tcp://b:2")
    assert view["active"] == "tcp://b:2"
    assert view["gen"] == 2
    # promoted within 4 heartbeat periods (20 s of clock)
    assert clock.now() <= 20


def test_lowest_index_standby_promoted():
    clock = ManualClock()
    overseer = Overseer(expected_servers=["tcp://a:1", "tcp://b:2", "tcp://c:3"],
                        clock=clock, heartbeat_interval_s=5)
    for endpoint, party in (("tcp://a:1", "s1"), ("tcp://b:2", "s2"),
                            ("tcp://c:3", "s3")):
        overseer.heartbeat(party, "server", endpoint)
    assert overseer.view()["active"] == "tcp://a:1"
    for _ in range(4):
        clock.advance(5)
        overseer.heartbeat("s2", "server", "tcp://b:2")
        overseer.heartbeat("s3", "server", "tcp://c:3")
    assert overseer.view()["active"] == "tcp://b:2"


def test_revived_server_rejoins_as_standby():
    clock = ManualClock()
    overseer = Overseer(clock=clock, heartbeat_interval_s=5)
    overseer.heartbeat("s1", "server", "tcp://a:1")
    overseer.heartbeat("s2", "server", "tcp://b:2")
    for _ in range(4):
        clock.advance(5)
        overseer.heartbeat("s2", "server", "tcp://b:2")
    assert overseer.view()["active"] == "tcp://b:2"
    generation = overseer.view()["gen"]
    # the old active comes back: still standby, generation unchanged
    view = overseer.heartbeat("s1", "server", "tcp://a:1")
    assert view["active"] == "tcp://b:2"
    assert view["gen"] == generation
    assert overseer.view()["servers"]["tcp://a:1"] == STANDBY


def test_no_healthy_server_reports_no_active():
    clock = ManualClock()
    overseer = Overseer(clock=clock, heartbeat_interval_s=5)
    overseer.heartbeat("s1", "server", "tcp://a:1")
    clock.advance(100)
    view = overseer.heartbeat("admin", "admin")
    assert view["active"] is None


# ---------------------------------------------------------------------------
# Full failover: kill active mid-job, standby resumes, model identical


def ha_project(num_clients):
    spec = simulation_project(num_clients)
    spec["parties"].append({"name": "server-2", "org": "hq",
                            "party_type": "server"})
    spec["parties"].append({"name": "overseer", "org": "hq",
                            "party_type": "overseer"})
    return spec


def start_ha_world(tmp_path, kits, num_clients, hb=0.05):
    overseer_server = OverseerServer(kits["overseer"], "tcp://127.0.0.1:0",
                                     heartbeat_interval_s=hb)
    overseer_server.start()
    overseer_ep = f"tcp://127.0.0.1:{overseer_server.port}"

    settings = fast_settings()
    settings.heartbeat_interval_s = hb
    shared = tmp_path / "shared"

    servers = []
    for name in ("server-1", "server-2"):
        server = FederatedServer(kits[name], "tcp://127.0.0.1:0",
                                 tmp_path / name,
                                 overseer_endpoint=overseer_ep,
                                 settings=settings, shared_dir=shared)
        server.start()
        server.endpoint = f"tcp://127.0.0.1:{server.port}"
        servers.append(server)

    clients = []
    for i in range(num_clients):
        site = f"site-{i + 1}"
        cfg = fast_client_config("", overseer_endpoint=overseer_ep)
        runtime = ClientRuntime(kits[site], cfg, work_dir=tmp_path / site)
        runtime.start()
        clients.append(runtime)
    return overseer_server, servers, clients


def wait_until(predicate, timeout=30, interval=0.02):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False


@pytest.mark.slow
def test_failover_resumes_job_bit_identical(tmp_path):
    rounds = 10
    job = sag_job(rounds=rounds, clients=2)

    # reference: uninterrupted run
    from flarelet.simulator import run_federation
    reference = run_federation(job, 2, tmp_path / "ref")
    assert reference.state["state"] == "DONE"

    kits = provision(ha_project(2))
    overseer_server, servers, clients = start_ha_world(tmp_path, kits, 2)
    s1, s2 = servers
    try:
        assert wait_until(lambda: s1.active)
        assert wait_until(lambda: len(s1.connected_sites()) == 2)

        job_id = s1.submit_job(job, submitter={"name": "admin", "org": "hq",
                                               "role": "project_admin"})

        # wait until round 5 completed (snapshot seq >= 6 means round 6 done)
        def round5_snapshotted():
            loaded = s1.snapshots.load_latest(job_id)
            return loaded is not None and loaded[1].get("round", 0) >= 6

        assert wait_until(round5_snapshotted, timeout=60)
        s1.kill()

        # standby must promote and resume; clients re-home
        assert wait_until(lambda: s2.active, timeout=30)
        assert wait_until(
            lambda: s2.job_store.get_state(job_id)["state"] == "DONE",
            timeout=120)

        result = json.loads(s2.load_result(job_id))
        assert result["model"] == reference.result["model"]

        # audit across both servers: every round completed exactly once
        completed = []
        for server in (s1, s2):
            for record in server.audit.records():
                if record["action"] == "round_completed" and \
                        record["ref"] == job_id:
                    completed.append(record["detail"])
        counts = {f"round={r}": 0 for r in range(rounds)}
        for detail in completed:
            counts[detail] += 1
        assert all(count == 1 for count in counts.values()), counts
    finally:
        for client in clients:
            client.stop(timeout=2)
        for server in servers:
            try:
                server.stop()
            except Exception:
                pass
        overseer_server.stop()


@pytest.mark.slow
def test_cutover_with_no_running_jobs_is_clean(tmp_path):
    kits = provision(ha_project(1))
    overseer_server, servers, clients = start_ha_world(tmp_path, kits, 1)
    s1, s2 = servers
    try:
        assert wait_until(lambda: s1.active)
        assert not s2.active
        s1.kill()
        assert wait_until(lambda: s2.active, timeout=30)
        assert s2.job_store.job_ids() == []
        assert wait_until(lambda: len(s2.connected_sites()) == 1, timeout=30)
    finally:
        for client in clients:
            client.stop(timeout=2)
        for server in servers:
            try:
                server.stop()
            except Exception:
                pass
        overseer_server.stop()
