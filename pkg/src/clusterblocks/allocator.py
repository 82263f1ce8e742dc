"""Node allocation: genetic-algorithm search, exhaustive oracle, reservation.

The objective rewards capable, homogeneous blocks: sum of perf scores minus
the perf spread within the candidate, minus a flat 1000 penalty if any node
falls below the requested floor. For that objective an optimal subset always
exists as a contiguous window of the perf-sorted free list, so the GA seeds
its population with the best window (and the plain top-k pick); elitism then
guarantees it never returns less than the oracle optimum on small instances.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .domain import Block, NodeRecord, NodeSpecClass, Period, new_id
from .errors import ClusterError

BELOW_FLOOR_PENALTY = 1000.0
EXHAUSTIVE_LIMIT = 10**6


class WrongCardinality(ClusterError):
    code = "wrong_cardinality"


class NodeNotFree(ClusterError):
    code = "node_not_free"


class InsufficientFreeNodes(ClusterError):
    code = "insufficient_free_nodes"


class SearchSpaceTooLarge(ClusterError):
    code = "search_space_too_large"


class RaceLost(ClusterError):
    code = "race_lost"


class UnknownBlock(ClusterError):
    code = "unknown_block"


class InvalidInventory(ClusterError):
    code = "invalid_inventory"


@dataclass(frozen=True)
class AllocationRequest:
    node_count: int
    min_perf_score: int = 0  # 0 = no preference

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if self.min_perf_score < 0:
            raise ValueError("min_perf_score must be >= 0")


@dataclass(frozen=True)
class Assignment:
    node_ids: tuple[str, ...]
    fitness: float


@dataclass(frozen=True)
class GaParams:
    population: int = 32
    generations: int = 100
    mutation_rate: float = 0.05
    crossover_rate: float = 0.8
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not (0.0 < self.mutation_rate < 1.0):
            raise ValueError("mutation_rate must be in (0,1)")
        if not (0.0 < self.crossover_rate < 1.0):
            raise ValueError("crossover_rate must be in (0,1)")


def fitness(candidate: Sequence[NodeRecord], request: AllocationRequest) -> float:
    """Deterministic score of one candidate block; higher is better."""
    if len(candidate) != request.node_count:
        raise WrongCardinality(
            f"candidate has {len(candidate)} nodes, request wants {request.node_count}"
        )
    for node in candidate:
        if not node.free:
            raise NodeNotFree(f"node {node.node_id} is owned by {node.owner}")
    scores = [node.spec.perf_score for node in candidate]
    total = float(sum(scores))
    spread = float(max(scores) - min(scores))
    penalty = BELOW_FLOOR_PENALTY if any(s < request.min_perf_score for s in scores) else 0.0
    return total - spread - penalty


def _free_nodes(inventory: Iterable[NodeRecord]) -> list[NodeRecord]:
    return sorted((n for n in inventory if n.free), key=lambda n: n.node_id)


def _require_capacity(free: list[NodeRecord], request: AllocationRequest) -> None:
    if len(free) < request.node_count:
        raise InsufficientFreeNodes(
            f"request wants {request.node_count} nodes but only {len(free)} are free"
        )


def allocate_exhaustive(
    request: AllocationRequest, inventory: Iterable[NodeRecord]
) -> Assignment:
    """Enumerate every free subset of the requested size; the validation oracle.

    Ties break toward the lexicographically smallest sorted node_id list,
    which is the first maximum met when iterating id-sorted combinations.
    """
    free = _free_nodes(inventory)
    _require_capacity(free, request)
    if math.comb(len(free), request.node_count) > EXHAUSTIVE_LIMIT:
        raise SearchSpaceTooLarge(
            f"C({len(free)},{request.node_count}) exceeds {EXHAUSTIVE_LIMIT}"
        )
    best: Optional[tuple[float, tuple[NodeRecord, ...]]] = None
    for combo in combinations(free, request.node_count):
        score = fitness(combo, request)
        if best is None or score > best[0]:
            best = (score, combo)
    assert best is not None
    return Assignment(tuple(n.node_id for n in best[1]), best[0])


def _best_window_seed(by_perf: list[int], k: int, evaluate) -> tuple[int, ...]:
    """Best contiguous window of the perf-sorted index list (provably optimal)."""
    windows = [tuple(sorted(by_perf[i : i + k])) for i in range(len(by_perf) - k + 1)]
    return max(windows, key=evaluate)


def allocate_ga(
    request: AllocationRequest,
    inventory: Iterable[NodeRecord],
    params: GaParams = GaParams(),
) -> Assignment:
    """Genetic search over free k-subsets; deterministic for a fixed rng_seed."""
    free = _free_nodes(inventory)
    _require_capacity(free, request)
    k = request.node_count
    n = len(free)
    rng = random.Random(params.rng_seed)

    scores: dict[tuple[int, ...], float] = {}

    def evaluate(individual: tuple[int, ...]) -> float:
        cached = scores.get(individual)
        if cached is None:
            cached = scores[individual] = fitness([free[i] for i in individual], request)
        return cached

    def random_individual() -> tuple[int, ...]:
        return tuple(sorted(rng.sample(range(n), k)))

    by_perf = sorted(range(n), key=lambda i: (free[i].spec.perf_score, free[i].node_id))
    population: list[tuple[int, ...]] = [
        _best_window_seed(by_perf, k, evaluate),  # greedy seed
        tuple(sorted(by_perf[-k:])),  # plain top-k by perf
    ]
    while len(population) < params.population:
        population.append(random_individual())

    def tournament() -> tuple[int, ...]:
        picks = [population[rng.randrange(len(population))] for _ in range(3)]
        return max(picks, key=evaluate)

    def crossover(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
        pool = sorted(set(a) | set(b))
        if len(pool) == k:
            return tuple(pool)
        return tuple(sorted(rng.sample(pool, k)))

    def mutate(individual: tuple[int, ...]) -> tuple[int, ...]:
        genes = set(individual)
        outside = [i for i in range(n) if i not in genes]
        if not outside:
            return individual
        genes.remove(rng.choice(sorted(genes)))
        genes.add(rng.choice(outside))
        return tuple(sorted(genes))

    best = max(population, key=evaluate)
    for _ in range(params.generations):
        next_population = [best]  # elitism
        while len(next_population) < params.population:
            child = tournament()
            if rng.random() < params.crossover_rate:
                child = crossover(child, tournament())
            if rng.random() < params.mutation_rate:
                child = mutate(child)
            next_population.append(child)
        population = next_population
        contender = max(population, key=evaluate)
        if evaluate(contender) > evaluate(best):
            best = contender

    return Assignment(tuple(free[i].node_id for i in best), evaluate(best))


def pick_master(nodes: Sequence[NodeRecord]) -> str:
    """Block master: highest perf score, ties to the smallest node_id."""
    return min(nodes, key=lambda n: (-n.spec.perf_score, n.node_id)).node_id


class Inventory:
    """Shared node table with all-or-nothing reservation and idempotent release.

    Nodes are the same NodeRecord objects the fleet simulates; this class owns
    only the `owner` field. Callers observe either full success or no change.
    """

    def __init__(self, nodes: Iterable[NodeRecord]):
        self._nodes: dict[str, NodeRecord] = {}
        for node in nodes:
            if node.node_id in self._nodes:
                raise InvalidInventory(f"duplicate node_id {node.node_id}")
            self._nodes[node.node_id] = node
        self._blocks: dict[str, Block] = {}
        self._released: set[str] = set()
        self._lock = threading.RLock()

    @property
    def nodes(self) -> list[NodeRecord]:
        return list(self._nodes.values())

    def node(self, node_id: str) -> NodeRecord:
        return self._nodes[node_id]

    def free_nodes(self) -> list[NodeRecord]:
        with self._lock:
            return _free_nodes(self._nodes.values())

    def active_blocks(self) -> list[Block]:
        with self._lock:
            return [b for b in self._blocks.values() if b.block_id not in self._released]

    def usage(self) -> tuple[list[str], list[Block]]:
        """One atomic snapshot of (free node ids, active blocks)."""
        with self._lock:
            free = [n.node_id for n in _free_nodes(self._nodes.values())]
            active = [b for b in self._blocks.values() if b.block_id not in self._released]
            return free, active

    def get_block(self, block_id: str) -> Block:
        with self._lock:
            if block_id not in self._blocks:
                raise UnknownBlock(f"no block {block_id}")
            return self._blocks[block_id]

    def reserve(self, assignment: Assignment, app_id: str, period: Period) -> Block:
        """Atomically stamp ownership on every assigned node and mint the Block."""
        with self._lock:
            nodes = []
            for node_id in assignment.node_ids:
                node = self._nodes.get(node_id)
                if node is None or not node.free:
                    owner = node.owner if node else "nothing (unknown node)"
                    raise RaceLost(f"node {node_id} is no longer free (owner: {owner})")
                nodes.append(node)
            block = Block(
                block_id=new_id("blk"),
                app_id=app_id,
                node_ids=tuple(assignment.node_ids),
                master_node=pick_master(nodes),
                period=period,
            )
            for node in nodes:
                node.owner = block.block_id
            self._blocks[block.block_id] = block
            return block

    def adopt(self, block: Block) -> None:
        """Re-register a block restored from durable state (gateway restart)."""
        with self._lock:
            for node_id in block.node_ids:
                node = self._nodes.get(node_id)
                if node is None or (not node.free and node.owner != block.block_id):
                    raise RaceLost(f"cannot adopt block {block.block_id}: {node_id} taken")
            for node_id in block.node_ids:
                self._nodes[node_id].owner = block.block_id
            self._blocks[block.block_id] = block

    def release(self, block_id: str) -> None:
        """Idempotently return a block's nodes to the free pool."""
        with self._lock:
            if block_id not in self._blocks:
                raise UnknownBlock(f"no block {block_id}")
            if block_id in self._released:
                return
            for node_id in self._blocks[block_id].node_ids:
                node = self._nodes[node_id]
                if node.owner == block_id:
                    node.owner = None
            self._released.add(block_id)


# ---------------------------------------------------------------------------
# inventory file format: `node_id,tier_label,perf_score,mem_mb`, '#' comments

def parse_inventory(text: str) -> list[NodeRecord]:
    tiers: dict[str, NodeSpecClass] = {}
    nodes: list[NodeRecord] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise InvalidInventory(f"line {lineno}: expected 4 comma-separated fields")
        node_id, label, perf_raw, mem_raw = parts
        try:
            spec = NodeSpecClass(label=label, perf_score=int(perf_raw), mem_mb=int(mem_raw))
        except ValueError as exc:
            raise InvalidInventory(f"line {lineno}: {exc}") from exc
        if node_id in seen:
            raise InvalidInventory(f"line {lineno}: duplicate node_id {node_id}")
        seen.add(node_id)
        known = tiers.get(label)
        if known is not None and known != spec:
            raise InvalidInventory(
                f"line {lineno}: tier {label} redefined with different spec"
            )
        tiers[label] = spec
        nodes.append(NodeRecord(node_id=node_id, spec=spec))
    by_perf = sorted(tiers.values(), key=lambda t: t.perf_score)
    for lower, upper in zip(by_perf, by_perf[1:]):
        if lower.perf_score == upper.perf_score:
            raise InvalidInventory(
                f"tiers {lower.label} and {upper.label} share perf_score {lower.perf_score}"
            )
    return nodes


def load_inventory(path: str | Path) -> list[NodeRecord]:
    return parse_inventory(Path(path).read_text("utf-8"))
