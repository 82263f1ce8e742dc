"""Allocator: fitness formula, GA vs exhaustive oracle, reservation semantics."""

from __future__ import annotations

import random
import threading

import pytest

from clusterblocks.allocator import (
    AllocationRequest,
    Assignment,
    GaParams,
    InsufficientFreeNodes,
    InvalidInventory,
    Inventory,
    NodeNotFree,
    RaceLost,
    SearchSpaceTooLarge,
    UnknownBlock,
    WrongCardinality,
    allocate_exhaustive,
    allocate_ga,
    fitness,
    parse_inventory,
    pick_master,
)
from clusterblocks.domain import NodeRecord, NodeSpecClass

from conftest import TIERS, make_nodes


def nodes_with_scores(scores: dict[str, int]) -> list[NodeRecord]:
    return [
        NodeRecord(node_id=name, spec=NodeSpecClass(f"t{score}", score, 128))
        for name, score in scores.items()
    ]


class TestFitness:
    def test_homogeneous_pair_has_no_penalty(self):
        nodes = nodes_with_scores({"a": 10, "b": 10})
        assert fitness(nodes, AllocationRequest(2)) == 20.0

    def test_spread_penalty(self):
        # hand evaluation: 10 + 40 = 50, spread 30 -> 20
        nodes = nodes_with_scores({"a": 10, "b": 40})
        assert fitness(nodes, AllocationRequest(2)) == 20.0

    def test_floor_penalty(self):
        # hand evaluation: 5 - 0 - 1000 = -995
        nodes = nodes_with_scores({"a": 5})
        assert fitness(nodes, AllocationRequest(1, min_perf_score=8)) == -995.0

    def test_wrong_cardinality(self):
        with pytest.raises(WrongCardinality):
            fitness(nodes_with_scores({"a": 5}), AllocationRequest(2))

    def test_owned_node_rejected(self):
        nodes = nodes_with_scores({"a": 5, "b": 5})
        nodes[0].owner = "blk-x"
        with pytest.raises(NodeNotFree):
            fitness(nodes, AllocationRequest(2))


class TestExhaustive:
    def test_single_pick_takes_higher_score(self):
        result = allocate_exhaustive(AllocationRequest(1), nodes_with_scores({"a": 3, "b": 9}))
        assert result.node_ids == ("b",)

    def test_tie_breaks_to_smallest_id_list(self):
        result = allocate_exhaustive(
            AllocationRequest(2), nodes_with_scores({"a": 5, "b": 5, "c": 5})
        )
        assert result.node_ids == ("a", "b")

    def test_enumerated_three_pair_instance(self):
        # all pairs: ab 50-30=20, ac 22-2=20, bc 52-28=24 -> bc wins
        result = allocate_exhaustive(
            AllocationRequest(2), nodes_with_scores({"a": 10, "b": 40, "c": 12})
        )
        assert result.node_ids == ("b", "c")
        assert result.fitness == 24.0

    def test_insufficient_free_nodes(self):
        with pytest.raises(InsufficientFreeNodes):
            allocate_exhaustive(AllocationRequest(3), nodes_with_scores({"a": 1, "b": 1}))

    def test_search_space_too_large(self):
        nodes = [
            NodeRecord(node_id=f"n{i:02d}", spec=NodeSpecClass("t", 3, 64)) for i in range(40)
        ]
        with pytest.raises(SearchSpaceTooLarge):
            allocate_exhaustive(AllocationRequest(20), nodes)


class TestGa:
    def test_unique_feasible_solution(self):
        nodes = nodes_with_scores({"a": 4, "b": 9})
        result = allocate_ga(AllocationRequest(2), nodes, GaParams(rng_seed=1))
        assert sorted(result.node_ids) == ["a", "b"]

    def test_deterministic_under_fixed_seed(self):
        nodes = make_nodes(("small", 4), ("medium", 3), ("xlarge", 3))
        first = allocate_ga(AllocationRequest(3), nodes, GaParams(rng_seed=7))
        second = allocate_ga(AllocationRequest(3), nodes, GaParams(rng_seed=7))
        assert first == second

    def test_matches_oracle_on_mixed_inventory(self):
        nodes = make_nodes(("small", 4), ("medium", 3), ("xlarge", 3))
        ga = allocate_ga(AllocationRequest(3), nodes, GaParams(rng_seed=11))
        oracle = allocate_exhaustive(AllocationRequest(3), nodes)
        assert ga.fitness == oracle.fitness

    def test_reported_fitness_is_recomputable(self):
        nodes = make_nodes(("small", 2), ("large", 2))
        result = allocate_ga(AllocationRequest(2), nodes, GaParams(rng_seed=3))
        chosen = [n for n in nodes if n.node_id in result.node_ids]
        assert fitness(chosen, AllocationRequest(2)) == result.fitness


def test_oracle_equivalence_on_random_instances():
    rng = random.Random(424242)
    tier_list = list(TIERS.values())
    for trial in range(40):
        tier_count = rng.randint(2, 4)
        tiers = rng.sample(tier_list, tier_count)
        nodes = []
        for i in range(rng.randint(4, 12)):
            nodes.append(NodeRecord(node_id=f"n{i:02d}", spec=rng.choice(tiers)))
        k = rng.randint(1, min(4, len(nodes)))
        floor = rng.choice([0, 0, tiers[0].perf_score, 10])
        request = AllocationRequest(k, min_perf_score=floor)
        ga = allocate_ga(request, nodes, GaParams(rng_seed=trial))
        oracle = allocate_exhaustive(request, nodes)
        assert ga.fitness == oracle.fitness, f"trial {trial}: {ga} vs {oracle}"


class TestMaster:
    def test_highest_perf_wins(self):
        nodes = nodes_with_scores({"n3": 9, "n4": 2})
        assert pick_master(nodes) == "n3"

    def test_tie_breaks_to_smallest_id(self):
        nodes = nodes_with_scores({"n10": 9, "n1": 9, "n2": 9})
        assert pick_master(nodes) == "n1"


class TestReserveRelease:
    def setup_method(self):
        self.nodes = make_nodes(("small", 2), ("large", 2))
        self.inventory = Inventory(self.nodes)

    def assignment(self, *node_ids: str) -> Assignment:
        return Assignment(node_ids=tuple(node_ids), fitness=0.0)

    def test_reserve_stamps_every_node(self):
        block = self.inventory.reserve(self.assignment("n00", "n01"), "app-1", (0.0, 10.0))
        assert all(self.inventory.node(n).owner == block.block_id for n in ("n00", "n01"))
        assert block.master_node in ("n00", "n01")

    def test_reserve_is_all_or_nothing(self):
        self.inventory.reserve(self.assignment("n01"), "app-1", (0.0, 10.0))
        with pytest.raises(RaceLost):
            self.inventory.reserve(self.assignment("n00", "n01"), "app-2", (0.0, 10.0))
        assert self.inventory.node("n00").owner is None  # untouched by the failed reserve

    def test_master_is_highest_perf(self):
        block = self.inventory.reserve(self.assignment("n00", "n02"), "app-1", (0.0, 10.0))
        assert block.master_node == "n02"  # large beats small

    def test_release_idempotent(self):
        block = self.inventory.reserve(self.assignment("n00", "n01"), "app-1", (0.0, 10.0))
        self.inventory.release(block.block_id)
        self.inventory.release(block.block_id)  # second call is a no-op success
        assert all(n.owner is None for n in self.inventory.nodes)

    def test_release_unknown_block(self):
        with pytest.raises(UnknownBlock):
            self.inventory.release("blk-missing")

    def test_released_nodes_are_reusable(self):
        block = self.inventory.reserve(self.assignment("n00", "n01"), "app-1", (0.0, 10.0))
        self.inventory.release(block.block_id)
        again = self.inventory.reserve(self.assignment("n00", "n01"), "app-2", (0.0, 10.0))
        assert again.block_id != block.block_id


def test_disjointness_under_randomized_interleaving():
    """Model check: >= 10,000 random reserve/release steps across 4 threads."""
    nodes = make_nodes(("small", 6), ("medium", 6), ("large", 4))
    inventory = Inventory(nodes)
    total = len(nodes)
    errors: list[str] = []
    check_lock = threading.Lock()

    def check_invariants():
        with check_lock:
            free_ids, active = inventory.usage()  # one atomic snapshot
            seen: dict[str, str] = {}
            for block in active:
                for node_id in block.node_ids:
                    if node_id in seen:
                        errors.append(f"{node_id} in {seen[node_id]} and {block.block_id}")
                    seen[node_id] = block.block_id
            owned = sum(len(b.node_ids) for b in active)
            if len(free_ids) + owned != total:
                errors.append(
                    f"conservation broken: {len(free_ids)} free + {owned} owned != {total}"
                )

    def worker(seed: int):
        rng = random.Random(seed)
        mine: list[str] = []
        for step in range(2500):
            if mine and rng.random() < 0.45:
                inventory.release(mine.pop(rng.randrange(len(mine))))
            else:
                free = inventory.free_nodes()
                k = rng.randint(1, 3)
                if len(free) < k:
                    continue
                picked = rng.sample([n.node_id for n in free], k)
                try:
                    block = inventory.reserve(
                        Assignment(tuple(picked), 0.0), f"app-{seed}", (0.0, 10.0)
                    )
                    mine.append(block.block_id)
                except RaceLost:
                    pass  # lost the race to another thread; fine
            if step % 97 == 0:
                check_invariants()

    threads = [threading.Thread(target=worker, args=(seed,)) for seed in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    check_invariants()
    assert errors == []


class TestInventoryFile:
    GOOD = """\
# test inventory
n01, small, 2, 256
n02, small, 2, 256
n03, xlarge, 16, 2048
"""

    def test_parse_happy_path(self):
        nodes = parse_inventory(self.GOOD)
        assert [n.node_id for n in nodes] == ["n01", "n02", "n03"]
        assert nodes[2].spec.perf_score == 16

    def test_comment_and_blank_lines_ignored(self):
        nodes = parse_inventory("\n# comment only\n" + self.GOOD)
        assert len(nodes) == 3

    @pytest.mark.parametrize(
        "bad",
        [
            "n01, small, 2",  # missing field
            "n01, small, -1, 64",  # bad perf
            "n01, small, 2, 64\nn01, small, 2, 64",  # duplicate id
            "n01, small, 2, 64\nn02, small, 3, 64",  # tier redefined
            "n01, a, 2, 64\nn02, b, 2, 64",  # two tiers share a perf score
        ],
    )
    def test_malformed_inventories_rejected(self, bad):
        with pytest.raises(InvalidInventory):
            parse_inventory(bad)
