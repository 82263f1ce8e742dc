"""Gateway configuration: a documented key=value file.

Format: one `key = value` per line, '#' starts a full-line comment, blank
lines ignored. Unknown keys are rejected so typos fail at boot, not at 3am.

    listen = 127.0.0.1:8420
    data_dir = ./data
    inventory = ./inventory.txt
    admin_secret = change-me
    min_nodes = 2
    max_nodes = 4
    max_period_hours = 72
    temp_threshold_c = 60.0
    sentinel_tick_seconds = 5
    max_upload_bytes = 67108864
    action_log = ./data/actions.ndjson
    gateway_identity = gateway
    console_dir =
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..domain import Policy
from ..errors import ClusterError

DEFAULT_MAX_UPLOAD_BYTES = 64 * 1024 * 1024  # limited-resource posture


class BadConfig(ClusterError):
    code = "bad_config"


@dataclass
class GatewayConfig:
    listen: str = "127.0.0.1:8420"
    data_dir: str = "./data"
    inventory: str = "./inventory.txt"
    admin_secret: str = "change-me"
    min_nodes: int = 2
    max_nodes: int = 4
    max_period_hours: int = 72
    temp_threshold_c: float = 60.0
    sentinel_tick_seconds: int = 5
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES
    action_log: str = ""
    gateway_identity: str = "gateway"
    console_dir: str = ""

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        try:
            return int(self.listen.rsplit(":", 1)[1])
        except (IndexError, ValueError):
            raise BadConfig(f"listen address {self.listen!r} is not host:port") from None

    def policy(self) -> Policy:
        return Policy(
            min_nodes=self.min_nodes,
            max_nodes=self.max_nodes,
            max_period_hours=self.max_period_hours,
            temp_threshold_c=self.temp_threshold_c,
            sentinel_tick_seconds=self.sentinel_tick_seconds,
        )

    def action_log_path(self) -> Path:
        if self.action_log:
            return Path(self.action_log)
        return Path(self.data_dir) / "actions.ndjson"


def parse_config(text: str) -> GatewayConfig:
    field_types = {f.name: f.type for f in fields(GatewayConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadConfig(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in field_types:
            raise BadConfig(f"config line {lineno}: unknown key {key!r}")
        kind = field_types[key]
        try:
            if kind == "int":
                values[key] = int(value)
            elif kind == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise BadConfig(f"config line {lineno}: {key} wants a {kind}") from None
    return GatewayConfig(**values)  # type: ignore[arg-type]


def load_config(path: str | Path) -> GatewayConfig:
    return parse_config(Path(path).read_text("utf-8"))
