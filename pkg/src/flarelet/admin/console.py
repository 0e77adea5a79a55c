"""Interactive operator console: a thin client over the ADMIN frame channel."""

from __future__ import annotations

import json
import shlex
import sys
from pathlib import Path
from typing import Optional

from ..security.auth import authenticate_outbound
from ..security.provision import StartupKit
from ..server.jobs import load_job_dir, zip_job_files
from ..transport.connection import ConnectError, PeerClosed, RecvTimeout
from ..transport.driver import driver_connect_raw
from ..transport.frame import Frame, MsgType

HELP = """commands:
  check_status                  system, clients, jobs overview
  list_jobs                     job table
  list_clients                  connected clients
  submit_job <job_dir>          upload and queue a job directory
  abort_job <job_id>            abort a queued/running job
  clone_job <job_id>            resubmit a copy of an existing job
  download_job_result <job_id> [out.json]
  set_timeout <seconds>         default task timeout
  shutdown_client <site>
  shutdown_system
  help / quit
"""


class AdminClient:
    """Synchronous request/response admin connection."""

    def __init__(self, endpoint: str, kit: StartupKit, timeout_s: float = 30.0):
        self.conn = driver_connect_raw(endpoint, timeout=10)
        authenticate_outbound(self.conn, kit)
        self.timeout_s = timeout_s

    def request(self, verb: str, args: Optional[dict] = None,
                payload: bytes = b"") -> tuple:
        self.conn.send(Frame(MsgType.ADMIN, {"verb": verb,
                                             "args": args or {}}, payload))
        reply = self.conn.recv(timeout=self.timeout_s)
        return reply.header, reply.payload

    def close(self) -> None:
        self.conn.close()


def _format_table(rows: list, columns: list) -> str:
    if not rows:
        return "(empty)"
    widths = [max(len(str(row.get(col, ""))) for row in rows + [{col: col}])
              for col in columns]
    lines = ["  ".join(col.ljust(width) for col, width in zip(columns, widths))]
    for row in rows:
        lines.append("  ".join(str(row.get(col, "")).ljust(width)
                               for col, width in zip(columns, widths)))
    return "\n".join(lines)


def run_command(client: AdminClient, line: str, out=sys.stdout) -> bool:
    """Execute one console line; returns False when the session should end."""
    parts = shlex.split(line.strip())
    if not parts:
        return True
    verb, args = parts[0], parts[1:]
    if verb in ("quit", "exit"):
        return False
    if verb == "help":
        print(HELP, file=out)
        return True

    payload = b""
    request_args: dict = {}
    if verb == "submit_job":
        if not args:
            print("usage: submit_job <job_dir>", file=out)
            return True
        payload = zip_job_files(load_job_dir(args[0]))
    elif verb in ("abort_job", "clone_job", "download_job_result"):
        if not args:
            print(f"usage: {verb} <job_id>", file=out)
            return True
        request_args["job_id"] = args[0]
    elif verb == "shutdown_client":
        if not args:
            print("usage: shutdown_client <site>", file=out)
            return True
        request_args["site"] = args[0]
    elif verb == "set_timeout":
        if not args:
            print("usage: set_timeout <seconds>", file=out)
            return True
        request_args["seconds"] = args[0]

    header, blob = client.request(verb, request_args, payload)
    if not header.get("ok"):
        error = header.get("error", {})
        print(f"DENIED/ERROR [{error.get('code')}]: {error.get('message')}",
              file=out)
        return True

    result = header.get("result")
    if verb == "list_jobs":
        print(_format_table(result, ["job_id", "name", "state", "round",
                                     "detail"]), file=out)
    elif verb == "list_clients":
        rows = [{"site": site, **info} for site, info in sorted(result.items())]
        print(_format_table(rows, ["site", "org", "last_seen"]), file=out)
    elif verb == "check_status":
        print(f"server   : {result['server']} ({result['endpoint']})",
              file=out)
        print(f"active   : {result['active']}  generation {result['generation']}",
              file=out)
        print(f"clients  : {', '.join(sorted(result['clients'])) or '(none)'}",
              file=out)
        print(_format_table(result["jobs"], ["job_id", "name", "state",
                                             "round"]), file=out)
    elif verb == "download_job_result":
        target = Path(args[1]) if len(args) > 1 else Path(f"{args[0]}.json")
        target.write_bytes(blob)
        print(f"wrote {len(blob)} bytes to {target}", file=out)
    else:
        print(json.dumps(result, indent=2), file=out)
    return True


def console_repl(kit: StartupKit, endpoint: str, stdin=sys.stdin,
                 stdout=sys.stdout) -> int:
    try:
        client = AdminClient(endpoint, kit)
    except (ConnectError, PeerClosed) as exc:
        print(f"cannot connect: {exc}", file=stdout)
        return 4
    print(f"connected to {endpoint} as {kit.name} ({kit.role})", file=stdout)
    print("type 'help' for commands", file=stdout)
    try:
        for line in stdin:
            try:
                if not run_command(client, line, out=stdout):
                    break
            except (PeerClosed, RecvTimeout) as exc:
                print(f"connection lost: {exc}", file=stdout)
                return 4
            print("> ", end="", file=stdout, flush=True)
    finally:
        client.close()
    return 0
