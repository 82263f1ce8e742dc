"""Environment-module switching across a block: one command, every node.

Shows each bundled parallel-environment flavor applying its PATH-style
prepends uniformly, and that switching away and back restores the
environment byte-for-byte.

Run:  python demos/module_switching.py
"""

from clusterblocks.clock import FakeClock
from clusterblocks.domain import Block, NodeRecord, NodeSpecClass, PowerState
from clusterblocks.fleet import Cluster

SPEC = NodeSpecClass("medium", 4, 512)


def main() -> None:
    nodes = [NodeRecord(node_id=f"n{i}", spec=SPEC) for i in range(3)]
    cluster = Cluster(nodes, clock=FakeClock())
    for node in nodes:
        cluster.set_power(node.node_id, PowerState.ON)
    block = Block(
        block_id="blk-demo",
        app_id="app-demo",
        node_ids=("n0", "n1", "n2"),
        master_node="n0",
        period=(0.0, 3600.0),
    )

    print("base PATH:", cluster.node("n0").env["PATH"])
    for name in sorted(cluster.manifest):
        env = cluster.switch_module(block, name)
        print(f"\nswitch -> {name}")
        print("  PATH           :", env["PATH"])
        print("  LD_LIBRARY_PATH:", env["LD_LIBRARY_PATH"])
        same = all(cluster.node(n).env == env for n in block.node_ids)
        print("  identical on every block node:", same)

    print("\nA -> B -> A restores the first environment exactly:")
    cluster.switch_module(block, "mpich1")
    first = {n: dict(cluster.node(n).env) for n in block.node_ids}
    cluster.switch_module(block, "pvm")
    cluster.switch_module(block, "mpich1")
    second = {n: dict(cluster.node(n).env) for n in block.node_ids}
    print("  byte-identical:", first == second)

    print("\nthe env command on a node sees the applied module:")
    envelope = cluster.exec_command("gateway", "n1", "env")
    for line in envelope.result.stdout.splitlines():
        if line.startswith("PATH="):
            print(" ", line)


if __name__ == "__main__":
    main()
