"""Admin plane: console over frames, HTTP status API, decision parity."""

import io
import json
import time

import pytest
from fastapi.testclient import TestClient

from flarelet.admin.api import create_status_app
from flarelet.admin.console import AdminClient, run_command
from flarelet.admin.service import AdminService
from flarelet.security import mint_token, provision
from flarelet.security.auth import PeerIdentity
from flarelet.server.jobs import zip_job_files
from flarelet.server.runtime import FederatedServer
from flarelet.simulator import fast_client_config, fast_settings
from flarelet.client.runtime import ClientRuntime
from tests.test_federation import sag_job


def admin_project():
    return {"name": "p", "parties": [
        {"name": "server-1", "org": "hq", "party_type": "server"},
        {"name": "site-1", "org": "hq", "party_type": "client"},
        {"name": "site-2", "org": "hq", "party_type": "client"},
        {"name": "alice", "org": "hq", "party_type": "admin", "role": "lead"},
        {"name": "bob", "org": "hq", "party_type": "admin", "role": "member"},
        {"name": "root", "org": "hq", "party_type": "admin",
         "role": "project_admin"},
    ]}


@pytest.fixture
def world(tmp_path):
    kits = provision(admin_project())
    server = FederatedServer(kits["server-1"], "inproc://admin-test-" +
                             tmp_path.name, tmp_path / "server",
                             settings=fast_settings())
    server.start()
    clients = []
    for site in ("site-1", "site-2"):
        cfg = fast_client_config(server.endpoint)
        runtime = ClientRuntime(kits[site], cfg, work_dir=tmp_path / site)
        runtime.start()
        clients.append(runtime)
    deadline = time.monotonic() + 10
    while len(server.connected_sites()) < 2 and time.monotonic() < deadline:
        time.sleep(0.01)
    yield kits, server, clients
    for c in clients:
        c.stop(timeout=2)
    server.stop()


def test_console_lifecycle_and_tables(world, tmp_path):
    kits, server, _ = world
    client = AdminClient(server.endpoint, kits["alice"])
    out = io.StringIO()

    run_command(client, "list_jobs", out=out)
    assert "(empty)" in out.getvalue()

    job_dir = tmp_path / "jobdir"
    for rel, data in sag_job(rounds=2, clients=2).items():
        target = job_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)

    out = io.StringIO()
    run_command(client, f"submit_job {job_dir}", out=out)
    assert "job_id" in out.getvalue()
    job_id = json.loads(out.getvalue())["job_id"]

    state = server.wait_for_job(job_id, timeout_s=60)
    assert state["state"] == "DONE"

    out = io.StringIO()
    run_command(client, "list_jobs", out=out)
    assert "DONE" in out.getvalue()

    out = io.StringIO()
    run_command(client, "list_clients", out=out)
    assert "site-1" in out.getvalue() and "site-2" in out.getvalue()

    target = tmp_path / "result.json"
    out = io.StringIO()
    run_command(client, f"download_job_result {job_id} {target}", out=out)
    assert json.loads(target.read_text())["best_accuracy"] >= 0
    client.close()


def test_console_member_denied_lead_allowed(world):
    kits, server, _ = world
    member = AdminClient(server.endpoint, kits["bob"])
    header, _ = member.request("submit_job", {},
                               zip_job_files(sag_job(rounds=1, clients=2)))
    assert header["ok"] is False
    assert header["error"]["code"] == "denied"
    member.close()

    lead = AdminClient(server.endpoint, kits["alice"])
    header, _ = lead.request("submit_job", {},
                             zip_job_files(sag_job(rounds=1, clients=2)))
    assert header["ok"] is True
    job_id = header["result"]["job_id"]
    server.wait_for_job(job_id, timeout_s=60)
    lead.close()

    # both decisions audited
    records = server.audit.records()
    denied = [r for r in records if r["action"] == "admin:submit_job"
              and r["outcome"] == "denied"]
    allowed = [r for r in records if r["action"] == "admin:submit_job"
               and r["outcome"] == "allowed"]
    assert denied and allowed


def test_abort_job_terminalizes_assignments(world):
    kits, server, _ = world
    lead = AdminClient(server.endpoint, kits["alice"])
    header, _ = lead.request("submit_job", {},
                             zip_job_files(sag_job(rounds=500, clients=2)))
    job_id = header["result"]["job_id"]
    deadline = time.monotonic() + 20
    while time.monotonic() < deadline:
        if server.job_store.get_state(job_id)["state"] == "RUNNING":
            break
        time.sleep(0.01)
    header, _ = lead.request("abort_job", {"job_id": job_id})
    assert header["ok"] is True
    state = server.wait_for_job(job_id, timeout_s=20)
    assert state["state"] == "ABORTED"
    runtime = server.jobs[job_id]
    assert runtime.engine.non_terminal_count() == 0
    lead.close()


def test_shutdown_client_via_console(world):
    kits, server, clients = world
    root = AdminClient(server.endpoint, kits["root"])
    header, _ = root.request("shutdown_client", {"site": "site-2"})
    assert header["ok"] is True
    deadline = time.monotonic() + 10
    while time.monotonic() < deadline:
        if "site-2" not in server.connected_sites():
            break
        time.sleep(0.02)
    assert "site-2" not in server.connected_sites()
    assert not clients[1].running
    root.close()


def test_set_timeout_and_clone(world):
    kits, server, _ = world
    lead = AdminClient(server.endpoint, kits["alice"])
    header, _ = lead.request("set_timeout", {"seconds": 7})
    assert header["ok"] and server.runtime_settings["task_timeout_s"] == 7.0
    header, _ = lead.request("submit_job", {},
                             zip_job_files(sag_job(rounds=1, clients=2)))
    original = header["result"]["job_id"]
    server.wait_for_job(original, timeout_s=60)
    header, _ = lead.request("clone_job", {"job_id": original})
    clone_id = header["result"]["job_id"]
    assert clone_id != original
    state = server.wait_for_job(clone_id, timeout_s=60)
    assert state["state"] == "DONE"
    lead.close()


# ---------------------------------------------------------------------------
# HTTP status API


def test_http_api_surface(world, tmp_path):
    kits, server, _ = world
    app = create_status_app(server)
    lead_token = mint_token(kits["alice"])
    member_token = mint_token(kits["bob"])
    http = TestClient(app)

    def auth(token):
        return {"Authorization": f"Bearer {token}"}

    # 401 without token
    assert http.get("/api/v1/jobs").status_code == 401
    assert http.get("/api/v1/jobs",
                    headers={"Authorization": "Bearer junk"}).status_code == 401

    # empty job table
    body = http.get("/api/v1/jobs", headers=auth(lead_token)).json()
    assert body == {"jobs": []}

    # system view and clients
    system = http.get("/api/v1/system", headers=auth(lead_token)).json()
    assert system["active"] is True
    assert set(system["clients"]) == {"site-1", "site-2"}
    clients_view = http.get("/api/v1/clients", headers=auth(lead_token)).json()
    assert set(clients_view["clients"]) == {"site-1", "site-2"}

    # member cannot submit -> 403 + audit
    blob = zip_job_files(sag_job(rounds=2, clients=2))
    response = http.post("/api/v1/jobs", headers=auth(member_token),
                         files={"file": ("job.zip", blob, "application/zip")})
    assert response.status_code == 403
    # lead submits fine
    response = http.post("/api/v1/jobs", headers=auth(lead_token),
                         files={"file": ("job.zip", blob, "application/zip")})
    assert response.status_code == 200
    job_id = response.json()["job_id"]

    state = server.wait_for_job(job_id, timeout_s=60)
    assert state["state"] == "DONE"

    # metric long-poll: cursor sees both rounds in order
    body = http.get(f"/api/v1/jobs/{job_id}/metrics?since=0",
                    headers=auth(lead_token)).json()
    rounds = [e["round"] for e in body["events"]]
    assert rounds == [0, 1]
    assert body["next"] == 2
    # cursor resume
    body = http.get(f"/api/v1/jobs/{job_id}/metrics?since=1",
                    headers=auth(lead_token)).json()
    assert [e["round"] for e in body["events"]] == [1]

    # job detail + 404
    detail = http.get(f"/api/v1/jobs/{job_id}", headers=auth(lead_token))
    assert detail.json()["state"] == "DONE"
    assert http.get("/api/v1/jobs/J9999",
                    headers=auth(lead_token)).status_code == 404

    # abort on a finished job -> 409
    response = http.post(f"/api/v1/jobs/{job_id}/abort",
                         headers=auth(lead_token))
    assert response.status_code == 409


def test_console_and_http_share_decisions(world):
    kits, server, _ = world
    # same identity, same verb: frame path and HTTP path agree
    service = AdminService(server)
    for role, verb, expect in (("member", "submit_job", False),
                               ("lead", "submit_job", True),
                               ("lead", "shutdown_system", False),
                               ("project_admin", "list_jobs", True)):
        identity = PeerIdentity(name="x", org="hq", role=role,
                                party_type="admin")
        # dispatch through the exact service both surfaces use
        outcome = service.dispatch(identity, verb, {"job_id": "J0001"}
                                   if verb == "abort_job" else {}, b"")
        allowed = bool(outcome.header.get("ok")) or \
            outcome.header.get("error", {}).get("code") != "denied"
        assert allowed is expect, (role, verb)
