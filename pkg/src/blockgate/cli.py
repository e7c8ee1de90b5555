"""``blockgate`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from blockgate import errors
from blockgate.certkit import CAIdentity, ca_issue, ca_keygen

DEFAULT_URL = os.environ.get("BLOCKGATE_URL", "http://127.0.0.1:8080")


def _print_json(status: int, doc) -> int:
    print(json.dumps({"status": status, "body": doc}, indent=2, sort_keys=True))
    return 0 if 200 <= status < 300 else 1


def _load_ca(path: str) -> CAIdentity:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return CAIdentity(doc["ca_id"], bytes.fromhex(doc["signing_key"]), bytes.fromhex(doc["verifying_key"]))


def cmd_serve(args) -> int:
    from blockgate.gateway import Gateway, load_config
    from blockgate.gateway.http import GatewayServer

    config = load_config(args.config)
    gateway = Gateway(config)
    server = GatewayServer(gateway, config.host, config.port, tick_interval=args.tick)
    print(f"blockgate: listening on {server.url}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_ca_keygen(args) -> int:
    ca = ca_keygen(args.id, args.seed)
    doc = {"ca_id": ca.ca_id, "signing_key": ca.signing_key.hex(), "verifying_key": ca.verifying_key.hex()}
    text = json.dumps(doc, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        os.chmod(args.output, 0o600)
    else:
        sys.stdout.write(text)
    print(f"ca_trust = {ca.ca_id}:{ca.verifying_key.hex()}", file=sys.stderr)
    return 0


def cmd_ca_issue(args) -> int:
    cert = ca_issue(_load_ca(args.ca), args.user, args.not_before, args.not_after)
    if args.output:
        Path(args.output).write_text(cert.to_wire() + "\n", encoding="ascii")
    else:
        print(cert.to_wire())
    return 0


def _admin_headers(args) -> dict[str, str]:
    token = args.token or os.environ.get("BLOCKGATE_ADMIN_TOKEN", "")
    return {"X-Admin-Token": token}


def cmd_admin_approve(args) -> int:
    from blockgate.gateway.http import call

    payload = {
        "username": args.user,
        "nodes": args.nodes,
        "middleware": args.middleware,
        "lease_start": args.lease_start,
        "lease_end": args.lease_end,
    }
    return _print_json(*call(args.url, "POST", "/admin/approve", payload, _admin_headers(args)))


def cmd_admin_release(args) -> int:
    from blockgate.gateway.http import call

    return _print_json(*call(args.url, "DELETE", f"/admin/allocation/{args.user}", None, _admin_headers(args)))


def cmd_submit(args) -> int:
    from blockgate.gateway.http import call

    payload = {
        "username": args.user,
        "userCA": Path(args.cert).read_text(encoding="ascii").strip(),
        "middleware": args.middleware,
        "job": {"command": args.command, "nodes": args.nodes, "walltime_s": args.walltime},
    }
    return _print_json(*call(args.url, "POST", "/wspc/request", payload))


def cmd_status(args) -> int:
    from blockgate.gateway.http import call

    path = f"/jobs/{args.job_id}" if args.job_id else "/blocks"
    return _print_json(*call(args.url, "GET", path))


def cmd_demo(args) -> int:
    from blockgate.demo import run_demo

    result = run_demo(seed=args.seed, distrust=args.distrust, use_http=not args.in_process)
    print(result.report)
    if args.events:
        Path(args.events).write_text(result.event_log, encoding="utf-8")
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockgate", description="Certificate-routed job gateway for a multi-block cluster")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command_name", required=True)

    s = sub.add_parser("serve", help="run the gateway HTTP service")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--tick", type=float, default=1.0, help="wall seconds per simulated second (0 disables)")
    s.set_defaults(func=cmd_serve)

    ca = sub.add_parser("ca", help="certificate authority tools").add_subparsers(dest="ca_cmd", required=True)
    s = ca.add_parser("keygen", help="derive a CA key pair from a seed")
    s.add_argument("--id", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_ca_keygen)
    s = ca.add_parser("issue", help="issue a user certificate (prints the wire blob)")
    s.add_argument("--ca", required=True, help="CA JSON written by 'ca keygen'")
    s.add_argument("--user", required=True)
    s.add_argument("--not-before", type=int, required=True)
    s.add_argument("--not-after", type=int, required=True)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_ca_issue)

    admin = sub.add_parser("admin", help="block allocation").add_subparsers(dest="admin_cmd", required=True)
    s = admin.add_parser("approve")
    s.add_argument("--url", default=DEFAULT_URL)
    s.add_argument("--token")
    s.add_argument("--user", required=True)
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--middleware", required=True)
    s.add_argument("--lease-start", type=int, required=True)
    s.add_argument("--lease-end", type=int, required=True)
    s.set_defaults(func=cmd_admin_approve)
    s = admin.add_parser("release")
    s.add_argument("--url", default=DEFAULT_URL)
    s.add_argument("--token")
    s.add_argument("--user", required=True)
    s.set_defaults(func=cmd_admin_release)

    s = sub.add_parser("submit", help="send a job request")
    s.add_argument("--url", default=DEFAULT_URL)
    s.add_argument("--user", required=True)
    s.add_argument("--cert", required=True, help="file holding the base64 certificate")
    s.add_argument("--middleware", required=True)
    s.add_argument("--command", required=True)
    s.add_argument("--nodes", type=int, default=1)
    s.add_argument("--walltime", type=int, default=60)
    s.set_defaults(func=cmd_submit)

    s = sub.add_parser("status", help="show a job, or list blocks when no id is given")
    s.add_argument("--url", default=DEFAULT_URL)
    s.add_argument("job_id", nargs="?")
    s.set_defaults(func=cmd_status)

    s = sub.add_parser("demo", help="run the two-grid federation scenario")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--distrust", help="drop this CA (grid1 or grid2) from the trust store")
    s.add_argument("--events", help="write the event log here")
    s.add_argument("--in-process", action="store_true", help="skip the loopback HTTP server")
    s.set_defaults(func=cmd_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except errors.BlockgateError as exc:
        print(f"blockgate: {exc.code}: {exc.detail}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"blockgate: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
