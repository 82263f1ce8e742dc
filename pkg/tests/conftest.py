"""Shared fixtures: canned inventories and a fully wired gateway on a fake clock."""

from __future__ import annotations

import pytest

from clusterblocks.clock import FakeClock
from clusterblocks.domain import NodeRecord, NodeSpecClass
from clusterblocks.gateway.api import create_app
from clusterblocks.gateway.config import GatewayConfig
from clusterblocks.gateway.service import GatewayService
from clusterblocks.store import Store

TIERS = {
    "small": NodeSpecClass("small", 2, 256),
    "medium": NodeSpecClass("medium", 4, 512),
    "large": NodeSpecClass("large", 8, 1024),
    "xlarge": NodeSpecClass("xlarge", 16, 2048),
}


def make_nodes(*groups: tuple[str, int], prefix: str = "n") -> list[NodeRecord]:
    """make_nodes(("small", 3), ("large", 2)) -> n00..n04 across the tiers."""
    nodes = []
    index = 0
    for tier, count in groups:
        for _ in range(count):
            nodes.append(NodeRecord(node_id=f"{prefix}{index:02d}", spec=TIERS[tier]))
            index += 1
    return nodes


def ten_node_inventory() -> list[NodeRecord]:
    return make_nodes(("small", 3), ("medium", 3), ("large", 2), ("xlarge", 2))


@pytest.fixture
def fake_clock() -> FakeClock:
    return FakeClock(start=1_000_000.0)


@pytest.fixture
def tmp_store(tmp_path) -> Store:
    return Store(tmp_path / "store", durable=False)


def build_service(
    tmp_path,
    clock: FakeClock,
    nodes: list[NodeRecord] | None = None,
    **config_overrides,
) -> GatewayService:
    config = GatewayConfig(
        data_dir=str(tmp_path / "data"),
        admin_secret="swordfish",
        action_log=str(tmp_path / "actions.ndjson"),
        **config_overrides,
    )
    return GatewayService(
        config,
        clock=clock,
        nodes=nodes if nodes is not None else ten_node_inventory(),
        store=Store(config.data_dir, durable=False),  # no fsync in tests
    )


@pytest.fixture
def service(tmp_path, fake_clock) -> GatewayService:
    return build_service(tmp_path, fake_clock)


@pytest.fixture
def client(service):
    from fastapi.testclient import TestClient

    with TestClient(create_app(service)) as test_client:
        yield test_client


ADMIN = {"X-Admin-Secret": "swordfish"}


def auth(token: str) -> dict[str, str]:
    return {"Authorization": f"Bearer {token}"}
