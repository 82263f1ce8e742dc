"""Admin CLI: serve the gateway, or drive a running one over HTTP.

    clusterblocks serve --config gateway.conf
    clusterblocks review app-xyz --approve --nodes 3 --hours 48
    clusterblocks review app-xyz --reject
    clusterblocks snapshot
    clusterblocks fanout all "echo hi"

The admin secret comes from --secret or $CLUSTERBLOCKS_ADMIN_SECRET.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import httpx

from .config import load_config
from .service import GatewayService

DEFAULT_GATEWAY = "http://127.0.0.1:8420"


def _admin_headers(args: argparse.Namespace) -> dict[str, str]:
    secret = args.secret or os.environ.get("CLUSTERBLOCKS_ADMIN_SECRET", "")
    return {"X-Admin-Secret": secret}


def _print_response(response: httpx.Response) -> int:
    try:
        payload = response.json()
    except ValueError:
        payload = {"raw": response.text}
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0 if response.is_success else 1


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    config = load_config(args.config)
    service = GatewayService(config)
    service.sentinel.start()
    app = create_app(service)
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level=args.log_level)
    finally:
        service.sentinel.stop()
    return 0


def cmd_review(args: argparse.Namespace) -> int:
    if args.approve == args.reject:
        print("review needs exactly one of --approve / --reject", file=sys.stderr)
        return 2
    if args.approve:
        body = {
            "decision": "approve",
            "node_count": args.nodes,
            "period_hours": args.hours,
        }
        if args.nodes is None or args.hours is None:
            print("--approve requires --nodes and --hours", file=sys.stderr)
            return 2
    else:
        body = {"decision": "reject"}
    with httpx.Client(base_url=args.gateway) as client:
        response = client.post(
            f"/admin/applications/{args.app_id}/review",
            json=body,
            headers=_admin_headers(args),
        )
    return _print_response(response)


def cmd_snapshot(args: argparse.Namespace) -> int:
    headers = _admin_headers(args) if (args.secret or os.environ.get("CLUSTERBLOCKS_ADMIN_SECRET")) else {}
    with httpx.Client(base_url=args.gateway) as client:
        response = client.get("/cluster", headers=headers)
    return _print_response(response)


def cmd_fanout(args: argparse.Namespace) -> int:
    with httpx.Client(base_url=args.gateway) as client:
        response = client.post(
            "/admin/fanout",
            json={"selector": args.selector, "command": args.command},
            headers=_admin_headers(args),
        )
    return _print_response(response)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusterblocks", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the gateway service")
    serve.add_argument("--config", required=True, help="path to the key=value config file")
    serve.add_argument("--log-level", default="info")
    serve.set_defaults(func=cmd_serve)

    def add_remote_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--gateway", default=DEFAULT_GATEWAY, help="gateway base URL")
        p.add_argument("--secret", default=None, help="admin secret")

    review = sub.add_parser("review", help="approve or reject a pending application")
    review.add_argument("app_id")
    review.add_argument("--approve", action="store_true")
    review.add_argument("--reject", action="store_true")
    review.add_argument("--nodes", type=int, default=None)
    review.add_argument("--hours", type=float, default=None)
    add_remote_args(review)
    review.set_defaults(func=cmd_review)

    snapshot = sub.add_parser("snapshot", help="print the cluster monitoring view")
    add_remote_args(snapshot)
    snapshot.set_defaults(func=cmd_snapshot)

    fanout = sub.add_parser("fanout", help="run a command on matching nodes")
    fanout.add_argument("selector", help="'all', comma-separated ids, or glob patterns")
    fanout.add_argument("command")
    add_remote_args(fanout)
    fanout.set_defaults(func=cmd_fanout)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
