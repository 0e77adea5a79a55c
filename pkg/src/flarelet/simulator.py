"""Run a whole federation in one process: server plus N clients.

The simulator and a TCP deployment share every code path except the socket;
that is the point.  run_federation() drives either flavor and returns the
final state, parsed result, metrics and the per-client message transcript,
so identical jobs can be compared across drivers bit for bit.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .client.runtime import ClientConfig, ClientRuntime
from .security.provision import StartupKit, provision
from .server.jobs import TERMINAL_JOB_STATES, load_job_dir
from .server.runtime import FederatedServer, ServerSettings

_sim_counter = [0]
_sim_lock = threading.Lock()


def _fresh_sim_name() -> str:
    with _sim_lock:
        _sim_counter[0] += 1
        return f"sim-{_sim_counter[0]}-{int(time.time() * 1000) & 0xFFFFF}"


@dataclass
class FederationResult:
    job_id: str
    state: dict
    result: Optional[dict]
    metrics: list
    transcript: dict
    audit_records: list = field(default_factory=list)


def simulation_project(num_clients: int, extra_parties=()) -> dict:
    parties = [{"name": "server-1", "org": "hq", "party_type": "server"},
               {"name": "admin", "org": "hq", "party_type": "admin",
                "role": "project_admin"}]
    parties += [{"name": f"site-{i + 1}", "org": "hq", "party_type": "client"}
                for i in range(num_clients)]
    parties += list(extra_parties)
    return {"name": "simulation", "parties": parties}


def fast_settings() -> ServerSettings:
    return ServerSettings(resource_reply_timeout_s=5.0,
                          scheduler_interval_s=0.05,
                          recv_timeout_s=5.0)


def fast_client_config(endpoint: str, **overrides) -> ClientConfig:
    cfg = ClientConfig(server_endpoint=endpoint, poll_interval_s=0.01,
                       backoff_base_s=0.05, backoff_cap_s=0.5,
                       recv_timeout_s=5.0, capacities={"gpu": 4})
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def run_federation(job, num_clients: int, work_dir, scheme: str = "inproc",
                   threads: Optional[int] = None, job_timeout_s: float = 300.0,
                   client_overrides: Optional[dict] = None,
                   kits: Optional[dict] = None) -> FederationResult:
    """Submit one job to a fresh federation and wait for it to finish.

    ``job`` is a job directory path or a {relpath: bytes} map.  ``scheme``
    selects the driver: "inproc" (the simulator) or "tcp" (loopback
    deployment).  ``threads`` caps concurrent task execution across clients.
    """
    files = job if isinstance(job, dict) else load_job_dir(job)
    work_dir = Path(work_dir)
    kits = kits or provision(simulation_project(num_clients))

    if scheme == "tcp":
        endpoint = "tcp://127.0.0.1:0"
    else:
        endpoint = f"inproc://{_fresh_sim_name()}"

    server = FederatedServer(kits["server-1"], endpoint, work_dir / "server",
                             settings=fast_settings())
    server.start()
    if scheme == "tcp":
        endpoint = f"tcp://127.0.0.1:{server.port}"
    server.endpoint = endpoint

    gate = threading.Semaphore(threads) if threads else None
    clients = []
    overrides = client_overrides or {}
    for i in range(num_clients):
        site = f"site-{i + 1}"
        cfg = fast_client_config(endpoint, **overrides.get(site, {}))
        runtime = ClientRuntime(kits[site], cfg,
                                work_dir=work_dir / site,
                                execution_gate=gate)
        runtime.start()
        clients.append(runtime)

    try:
        deadline = time.monotonic() + job_timeout_s
        while len(server.connected_sites()) < num_clients:
            if time.monotonic() > deadline:
                raise TimeoutError("clients failed to connect")
            time.sleep(0.01)

        admin = kits["admin"]
        job_id = server.submit_job(files, submitter={
            "name": admin.name, "org": admin.org, "role": admin.role})
        state = server.wait_for_job(job_id, timeout_s=job_timeout_s)
        result_blob = server.load_result(job_id)
        runtime = server.jobs.get(job_id)
        metrics = list(runtime.metrics) if runtime else []
        return FederationResult(
            job_id=job_id, state=state,
            result=json.loads(result_blob) if result_blob else None,
            metrics=metrics,
            transcript={site: list(seq) for site, seq in
                        server.transcript.items()},
            audit_records=server.audit.records())
    finally:
        for client in clients:
            client.stop(timeout=3)
        server.stop()
