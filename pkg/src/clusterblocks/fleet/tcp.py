"""Loopback TCP mode for the fleet channel.

Mirrors the gateway/node process separation: one JSON object per line, UTF-8.
Request:  {"identity": ..., "node": ..., "op": ..., "args": {...}}
Response: {"exit_code": int, "stdout": str, "stderr": str}

Ops: exec {command}, power {target}, transfer_in {name, data_b64},
transfer_out {name} (payload returned base64 in stdout), sensors {}.
Channel refusals come back as exit_code 255 with the error code in stderr.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
from typing import Optional

from ..domain import PowerState
from ..errors import ClusterError
from . import Cluster, TransferDirection

CHANNEL_ERROR_EXIT = 255


def handle_request(cluster: Cluster, request: dict) -> dict:
    """Dispatch one decoded request against the in-process fleet."""
    identity = request.get("identity", "")
    node = request.get("node", "")
    op = request.get("op", "")
    args = request.get("args", {}) or {}
    try:
        if op == "exec":
            envelope = cluster.exec_command(identity, node, args.get("command", ""))
            result = envelope.result
            assert result is not None
            return {"exit_code": result.exit_code, "stdout": result.stdout, "stderr": result.stderr}
        if op == "power":
            record = cluster.set_power(node, PowerState(args["target"]))
            return {"exit_code": 0, "stdout": f"power {record.power.value}\n", "stderr": ""}
        if op == "transfer_in":
            data = base64.b64decode(args["data_b64"])
            cluster.transfer_file(identity, node, TransferDirection.IN, args["name"], data)
            return {"exit_code": 0, "stdout": f"staged {args['name']}\n", "stderr": ""}
        if op == "transfer_out":
            payload = cluster.transfer_file(identity, node, TransferDirection.OUT, args["name"])
            assert payload is not None
            encoded = base64.b64encode(payload).decode("ascii")
            return {"exit_code": 0, "stdout": encoded, "stderr": ""}
        if op == "sensors":
            sample = cluster.read_sensors(node)
            return {
                "exit_code": 0,
                "stdout": json.dumps(
                    {
                        "node_id": sample.node_id,
                        "temperature_c": sample.temperature_c,
                        "load": sample.load,
                        "taken_at": sample.taken_at,
                    },
                    sort_keys=True,
                ),
                "stderr": "",
            }
        return {"exit_code": CHANNEL_ERROR_EXIT, "stdout": "", "stderr": f"unknown op {op!r}\n"}
    except ClusterError as exc:
        return {
            "exit_code": CHANNEL_ERROR_EXIT,
            "stdout": "",
            "stderr": f"{exc.code}: {exc.message}\n",
        }
    except (KeyError, ValueError) as exc:
        return {"exit_code": CHANNEL_ERROR_EXIT, "stdout": "", "stderr": f"bad request: {exc}\n"}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except ValueError:
                response = {
                    "exit_code": CHANNEL_ERROR_EXIT,
                    "stdout": "",
                    "stderr": "bad request: not valid JSON\n",
                }
            else:
                response = handle_request(self.server.cluster, request)  # type: ignore[attr-defined]
            self.wfile.write((json.dumps(response, sort_keys=True) + "\n").encode("utf-8"))
            self.wfile.flush()


class FleetTcpServer(socketserver.ThreadingTCPServer):
    """Serve an in-process Cluster over loopback TCP."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, cluster: Cluster, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.cluster = cluster
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start(self) -> "FleetTcpServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


class FleetTcpClient:
    """Line-oriented client for FleetTcpServer."""

    def __init__(self, host: str, port: int, identity: str):
        self.identity = identity
        self._sock = socket.create_connection((host, port))
        self._reader = self._sock.makefile("rb")

    def request(self, node: str, op: str, **args) -> dict:
        message = {"identity": self.identity, "node": node, "op": op, "args": args}
        self._sock.sendall((json.dumps(message) + "\n").encode("utf-8"))
        line = self._reader.readline()
        if not line:
            raise ConnectionError("fleet server closed the connection")
        return json.loads(line)

    def exec_command(self, node: str, command: str) -> dict:
        return self.request(node, "exec", command=command)

    def transfer_in(self, node: str, name: str, data: bytes) -> dict:
        return self.request(node, "transfer_in", name=name, data_b64=base64.b64encode(data).decode("ascii"))

    def transfer_out(self, node: str, name: str) -> bytes:
        response = self.request(node, "transfer_out", name=name)
        if response["exit_code"] != 0:
            raise ClusterError(response["stderr"])
        return base64.b64decode(response["stdout"])

    def close(self) -> None:
        self._reader.close()
        self._sock.close()

    def __enter__(self) -> "FleetTcpClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
