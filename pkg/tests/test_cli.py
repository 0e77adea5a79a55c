"""CLI surface: provision, simulate, and a real multi-process deployment."""

import json
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from tests.test_federation import sag_job

PYTHON = sys.executable


def run_cli(*args, timeout=120):
    return subprocess.run([PYTHON, "-m", "flarelet.cli", *args],
                          capture_output=True, text=True, timeout=timeout)


def write_job_dir(tmp_path, files):
    job_dir = tmp_path / "job"
    for rel, data in files.items():
        target = job_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    return job_dir


def free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_provision_cli(tmp_path):
    spec = {"name": "p", "parties": [
        {"name": "server-1", "org": "hq", "party_type": "server"},
        {"name": "site-1", "org": "hq", "party_type": "client"},
        {"name": "alice", "org": "hq", "party_type": "admin", "role": "lead"},
    ]}
    spec_path = tmp_path / "project.json"
    spec_path.write_text(json.dumps(spec))
    proc = run_cli("provision", "--spec", str(spec_path),
                   "--out", str(tmp_path / "kits"))
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "kits" / "site-1" / "cert.json").exists()


def test_provision_bad_spec_exit_2(tmp_path):
    spec_path = tmp_path / "project.json"
    spec_path.write_text("{not json")
    proc = run_cli("provision", "--spec", str(spec_path),
                   "--out", str(tmp_path / "kits"))
    assert proc.returncode == 2


def test_simulate_cli(tmp_path):
    job_dir = write_job_dir(tmp_path, sag_job(rounds=2, clients=2))
    proc = run_cli("simulate", "--job", str(job_dir), "--clients", "2",
                   "--workdir", str(tmp_path / "run"))
    assert proc.returncode == 0, proc.stderr + proc.stdout
    assert "DONE" in proc.stdout
    result = json.loads((tmp_path / "run" / "result.json").read_text())
    assert "model" in result


def test_simulate_missing_job_exit_2(tmp_path):
    proc = run_cli("simulate", "--job", str(tmp_path / "nope"),
                   "--clients", "1")
    assert proc.returncode == 2


@pytest.mark.slow
def test_multiprocess_deployment(tmp_path):
    port = free_port()
    spec = {"name": "p", "parties": [
        {"name": "server-1", "org": "hq", "party_type": "server"},
        {"name": "site-1", "org": "hq", "party_type": "client"},
        {"name": "site-2", "org": "hq", "party_type": "client"},
        {"name": "alice", "org": "hq", "party_type": "admin", "role": "lead"},
    ], "endpoints": {"server": f"tcp://127.0.0.1:{port}"}}
    spec_path = tmp_path / "project.json"
    spec_path.write_text(json.dumps(spec))
    kits = tmp_path / "kits"
    assert run_cli("provision", "--spec", str(spec_path),
                   "--out", str(kits)).returncode == 0

    client_cfg = tmp_path / "client.json"
    client_cfg.write_text(json.dumps({
        "server_endpoint": f"tcp://127.0.0.1:{port}",
        "poll_interval_s": 0.05, "capacities": {"gpu": 2}}))

    procs = []
    try:
        procs.append(subprocess.Popen(
            [PYTHON, "-m", "flarelet.cli", "server",
             "--kit", str(kits / "server-1"),
             "--listen", f"tcp://127.0.0.1:{port}",
             "--workdir", str(tmp_path / "server-work")],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True))
        time.sleep(1.0)
        for site in ("site-1", "site-2"):
            procs.append(subprocess.Popen(
                [PYTHON, "-m", "flarelet.cli", "client",
                 "--kit", str(kits / site), "--config", str(client_cfg),
                 "--workdir", str(tmp_path / f"{site}-work")],
                stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True))
        time.sleep(1.5)

        job_dir = write_job_dir(tmp_path, sag_job(rounds=2, clients=2))
        proc = run_cli("console", "--kit", str(kits / "alice"),
                       "--endpoint", f"tcp://127.0.0.1:{port}",
                       "--command", f"submit_job {job_dir}")
        assert proc.returncode == 0, proc.stdout + proc.stderr
        job_id = json.loads(proc.stdout)["job_id"]

        deadline = time.monotonic() + 90
        state = ""
        while time.monotonic() < deadline:
            proc = run_cli("console", "--kit", str(kits / "alice"),
                           "--endpoint", f"tcp://127.0.0.1:{port}",
                           "--command", "list_jobs")
            if "DONE" in proc.stdout:
                state = "DONE"
                break
            if "FAILED" in proc.stdout:
                state = "FAILED"
                break
            time.sleep(0.5)
        assert state == "DONE", proc.stdout
    finally:
        for proc in procs:
            proc.send_signal(signal.SIGTERM)
        for proc in procs:
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
