"""Tour of the block allocator: the fitness objective, GA search, and the
exhaustive oracle agreeing with it.

Run:  python demos/allocation_tour.py
"""

import random

from clusterblocks.allocator import (
    AllocationRequest,
    GaParams,
    allocate_exhaustive,
    allocate_ga,
    fitness,
)
from clusterblocks.domain import NodeRecord, NodeSpecClass

TIERS = [
    NodeSpecClass("small", 2, 256),
    NodeSpecClass("medium", 4, 512),
    NodeSpecClass("large", 8, 1024),
    NodeSpecClass("xlarge", 16, 2048),
]


def show(label, assignment, inventory):
    by_id = {n.node_id: n for n in inventory}
    tiers = [by_id[nid].spec.label for nid in assignment.node_ids]
    print(f"  {label}: {list(assignment.node_ids)} tiers={tiers} fitness={assignment.fitness}")


def main() -> None:
    rng = random.Random(7)
    inventory = [
        NodeRecord(node_id=f"n{i:02d}", spec=rng.choice(TIERS)) for i in range(12)
    ]
    print("inventory:")
    for node in inventory:
        print(f"  {node.node_id}: {node.spec.label} (perf {node.spec.perf_score})")

    print("\nobjective: sum(perf) - (max perf - min perf) - 1000 if below the floor")
    sample = inventory[:3]
    print(
        f"  e.g. {[n.node_id for n in sample]} scores "
        f"{[n.spec.perf_score for n in sample]} -> {fitness(sample, AllocationRequest(3))}"
    )

    print("\nhomogeneity matters: capable but mixed blocks lose to tight ones")
    for k in (2, 3, 4):
        request = AllocationRequest(node_count=k)
        ga = allocate_ga(request, inventory, GaParams(rng_seed=k))
        oracle = allocate_exhaustive(request, inventory)
        show(f"GA       k={k}", ga, inventory)
        show(f"oracle   k={k}", oracle, inventory)
        assert ga.fitness == oracle.fitness, "GA must match the oracle"

    print("\nwith a performance floor (min_perf_score=8), weak tiers are penalized out")
    request = AllocationRequest(node_count=3, min_perf_score=8)
    show("GA floor=8", allocate_ga(request, inventory, GaParams(rng_seed=99)), inventory)

    print("\n100-instance spot check: GA fitness == oracle fitness on every one")
    agree = 0
    for trial in range(100):
        nodes = [
            NodeRecord(node_id=f"m{i:02d}", spec=rng.choice(TIERS))
            for i in range(rng.randint(4, 12))
        ]
        request = AllocationRequest(rng.randint(1, 4))
        if request.node_count > len(nodes):
            continue
        ga = allocate_ga(request, nodes, GaParams(rng_seed=trial))
        if ga.fitness == allocate_exhaustive(request, nodes).fitness:
            agree += 1
    print(f"  agreement: {agree}/100")


if __name__ == "__main__":
    main()
