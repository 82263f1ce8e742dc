"""Command fan-out across nodes, and the loopback-TCP flavor of the channel.

Run:  python demos/fanout_and_tcp.py
"""

import tempfile

from clusterblocks.clock import FakeClock
from clusterblocks.domain import NodeRecord, NodeSpecClass, PowerState
from clusterblocks.fleet import Cluster
from clusterblocks.fleet.tcp import FleetTcpClient, FleetTcpServer
from clusterblocks.gateway.config import GatewayConfig
from clusterblocks.gateway.service import GatewayService

ADMIN = "demo-secret"


def main() -> None:
    nodes = [
        NodeRecord(node_id=f"n{i:02d}", spec=NodeSpecClass("small", 2, 256)) for i in range(5)
    ]
    service = GatewayService(
        GatewayConfig(data_dir=tempfile.mkdtemp(prefix="clusterblocks-fanout-"), admin_secret=ADMIN),
        clock=FakeClock(),
        nodes=nodes,
    )
    for node_id in ("n00", "n01", "n02"):
        service.cluster.set_power(node_id, PowerState.ON)

    print("fan-out 'echo hello' to all nodes (two are off on purpose):")
    for envelope in service.admin_fanout(ADMIN, "all", "echo hello"):
        if "error" in envelope:
            print(f"  {envelope['node_id']}: UNREACHABLE ({envelope['error']})")
        else:
            print(f"  {envelope['node_id']}: exit {envelope['exit_code']} -> {envelope['stdout']!r}")

    print("selector 'n00,n02' hits exactly those nodes:")
    for envelope in service.admin_fanout(ADMIN, "n00,n02", "env"):
        first = envelope["stdout"].splitlines()[0]
        print(f"  {envelope['node_id']}: {first} ...")

    print("\nthe same channel speaks newline-delimited JSON over loopback TCP:")
    cluster = Cluster(
        [NodeRecord(node_id="t0", spec=NodeSpecClass("small", 2, 256))], clock=FakeClock()
    )
    cluster.set_power("t0", PowerState.ON)
    server = FleetTcpServer(cluster).start()
    host, port = server.address
    print(f"  fleet listening on {host}:{port}")
    with FleetTcpClient(host, port, identity="gateway") as client:
        print("  exec  :", client.exec_command("t0", "echo over the wire"))
        client.transfer_in("t0", "data.bin", b"\x01\x02\x03")
        print("  staged:", client.exec_command("t0", "cat data.bin"))
        print("  bytes :", client.transfer_out("t0", "data.bin"))
    with FleetTcpClient(host, port, identity="intruder") as client:
        print("  foreign identity:", client.exec_command("t0", "echo nope"))
    server.stop()


if __name__ == "__main__":
    main()
