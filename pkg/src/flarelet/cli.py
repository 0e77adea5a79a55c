"""flarelet command line: provision, run parties, simulate, operate."""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
import time
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_AUTH = 3
EXIT_RUNTIME = 4


def _load_kit(kit_dir):
    from .security.provision import ProvisionError, StartupKit
    try:
        return StartupKit.load(kit_dir)
    except ProvisionError as exc:
        print(f"bad startup kit: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _wait_forever(stop_callbacks):
    done = threading.Event()

    def handler(signum, frame):
        done.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    try:
        while not done.is_set():
            time.sleep(0.2)
    finally:
        for callback in stop_callbacks:
            try:
                callback()
            except Exception:
                pass


def cmd_provision(args) -> int:
    from .security.provision import ProvisionError, provision
    try:
        spec = json.loads(Path(args.spec).read_text())
    except (OSError, ValueError) as exc:
        print(f"cannot read project spec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        kits = provision(spec, out_dir=args.out)
    except ProvisionError as exc:
        print(f"provisioning failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name in sorted(kits):
        print(f"wrote kit: {Path(args.out) / name}")
    return EXIT_OK


def cmd_server(args) -> int:
    from .server.runtime import FederatedServer
    kit = _load_kit(args.kit)
    endpoint = args.listen or kit.endpoints.get("server", "tcp://0.0.0.0:8102")
    overseer = args.overseer or kit.endpoints.get("overseer") or None
    server = FederatedServer(kit, endpoint, args.workdir,
                             overseer_endpoint=overseer,
                             shared_dir=args.shared or None)
    try:
        server.start()
    except OSError as exc:
        print(f"cannot listen on {endpoint}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"server {kit.name} listening on {endpoint}"
          + (f", overseer {overseer}" if overseer else ""))
    stoppers = [server.stop]
    if args.http:
        from .admin.api import serve_status_api
        static = args.dashboard or None
        serve_status_api(server, args.http_host, args.http, static_dir=static)
        print(f"status API on http://{args.http_host}:{args.http}/api/v1")
    _wait_forever(stoppers)
    return EXIT_OK


def cmd_client(args) -> int:
    from .client.runtime import ClientConfig, ClientRuntime
    kit = _load_kit(args.kit)
    try:
        config = ClientConfig.load(args.config) if args.config else \
            ClientConfig(server_endpoint=kit.endpoints.get("server", ""),
                         overseer_endpoint=kit.endpoints.get("overseer", ""))
    except (OSError, ValueError) as exc:
        print(f"bad client config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not config.server_endpoint and not config.overseer_endpoint:
        print("no server or overseer endpoint configured", file=sys.stderr)
        return EXIT_CONFIG
    runtime = ClientRuntime(kit, config, work_dir=args.workdir)
    runtime.start()
    print(f"client {kit.name} polling "
          f"{config.overseer_endpoint or config.server_endpoint}")
    _wait_forever([runtime.stop])
    return EXIT_OK


def cmd_overseer(args) -> int:
    from .ha.overseer import OverseerServer
    kit = _load_kit(args.kit)
    endpoint = args.listen or kit.endpoints.get("overseer", "tcp://0.0.0.0:8101")
    overseer = OverseerServer(kit, endpoint,
                              heartbeat_interval_s=args.heartbeat)
    try:
        overseer.start()
    except OSError as exc:
        print(f"cannot listen on {endpoint}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"overseer listening on {endpoint}")
    _wait_forever([overseer.stop])
    return EXIT_OK


def cmd_console(args) -> int:
    from .admin.console import AdminClient, console_repl, run_command
    from .transport.connection import AuthError, ConnectError
    kit = _load_kit(args.kit)
    endpoint = args.endpoint or kit.endpoints.get("server", "")
    if not endpoint:
        print("no server endpoint (use --endpoint)", file=sys.stderr)
        return EXIT_CONFIG
    if args.command:
        try:
            client = AdminClient(endpoint, kit)
        except AuthError:
            return EXIT_AUTH
        except ConnectError as exc:
            print(f"cannot connect: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        try:
            run_command(client, args.command)
        finally:
            client.close()
        return EXIT_OK
    return console_repl(kit, endpoint)


def cmd_simulate(args) -> int:
    from .simulator import run_federation
    job_dir = Path(args.job)
    if not job_dir.is_dir():
        print(f"{job_dir} is not a job directory", file=sys.stderr)
        return EXIT_CONFIG
    workdir = args.workdir or (Path.cwd() / "simulate-run")
    try:
        outcome = run_federation(job_dir, args.clients, workdir,
                                 scheme="inproc", threads=args.threads,
                                 job_timeout_s=args.timeout)
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"job {outcome.job_id}: {outcome.state['state']}")
    for metric in outcome.metrics:
        print("  " + json.dumps(metric))
    if outcome.state["state"] != "DONE":
        return EXIT_RUNTIME
    result_path = Path(workdir) / "result.json"
    result_path.write_text(json.dumps(outcome.result))
    print(f"result written to {result_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flarelet",
        description="federated learning runtime: simulate locally or deploy over TCP")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("provision", help="generate startup kits")
    p.add_argument("--spec", required=True, help="project spec JSON")
    p.add_argument("--out", required=True, help="output directory for kits")
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("server", help="run a federated server")
    p.add_argument("--kit", required=True)
    p.add_argument("--listen", default="")
    p.add_argument("--overseer", default="")
    p.add_argument("--workdir", default="server-work")
    p.add_argument("--shared", default="", help="HA-shared state directory")
    p.add_argument("--http", type=int, default=0, help="status API port")
    p.add_argument("--http-host", default="127.0.0.1")
    p.add_argument("--dashboard", default="", help="static dashboard directory")
    p.set_defaults(func=cmd_server)

    p = sub.add_parser("client", help="run a site client")
    p.add_argument("--kit", required=True)
    p.add_argument("--config", default="", help="client.json")
    p.add_argument("--workdir", default="client-work")
    p.set_defaults(func=cmd_client)

    p = sub.add_parser("overseer", help="run the overseer")
    p.add_argument("--kit", required=True)
    p.add_argument("--listen", default="")
    p.add_argument("--heartbeat", type=float, default=5.0)
    p.set_defaults(func=cmd_overseer)

    p = sub.add_parser("console", help="interactive admin console")
    p.add_argument("--kit", required=True)
    p.add_argument("--endpoint", default="")
    p.add_argument("--command", default="", help="run one command and exit")
    p.set_defaults(func=cmd_console)

    p = sub.add_parser("simulate", help="run a job in-process")
    p.add_argument("--job", required=True)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--workdir", default="")
    p.add_argument("--timeout", type=float, default=600.0)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
