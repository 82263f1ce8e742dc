"""Simulated node fleet and the gateway-to-node command channel.

This is the ssh/scp analog: every command, transfer and power switch rides a
CommandEnvelope audit record carrying the sender's key identity. Only the
configured gateway identity is authorized; everything else is rejected.

Job execution is virtual-time: a rank completes once the injected clock
passes start + declared runtime, evaluated lazily by poll_jobs(). Nothing
blocks on a running job.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional

from ..clock import Clock
from ..domain import Block, NodeRecord, PowerState
from ..errors import ClusterError
from .jobs import (
    FailureMode,
    SimJobScript,
    build_result_archive,
    parse_job_archive,
)
from .modules import (
    DEFAULT_MANIFEST,
    ModuleManifestEntry,
    apply_module,
    manifest_entry,
    remove_module,
)
from .shell import run_command

AMBIENT_C = 25.0
DEGREES_PER_LOAD = 8.0
KILLED_EXIT = 137


class UnknownNode(ClusterError):
    code = "unknown_node"


class NodeUnreachable(ClusterError):
    code = "node_unreachable"


class IdentityRejected(ClusterError):
    code = "identity_rejected"


class NoSuchFile(ClusterError):
    code = "no_such_file"


class SensorFault(ClusterError):
    code = "sensor_fault"


class EnvironmentMismatch(ClusterError):
    code = "environment_mismatch"


class TransferDirection(str, Enum):
    IN = "in"
    OUT = "out"


@dataclass(frozen=True)
class CommandResult:
    exit_code: int
    stdout: str
    stderr: str


@dataclass(frozen=True)
class CommandEnvelope:
    """Append-only audit record of one channel use. result iff the node answered."""

    target: str
    command: str
    sender_identity: str
    sent_at: float
    context: str = ""  # app/job attribution stamped by the caller
    result: Optional[CommandResult] = None
    error: str = ""  # channel-level refusal (unreachable, identity rejected)


@dataclass(frozen=True)
class TelemetrySample:
    node_id: str
    temperature_c: float
    load: float
    taken_at: float


@dataclass
class RankRun:
    """One rank of a simulated parallel job pinned to one node."""

    job_id: str
    rank: int
    node_id: str
    script: SimJobScript
    started_at: float
    killed_at: Optional[float] = None
    kill_reason: str = ""

    @property
    def ends_at(self) -> Optional[float]:
        """Virtual completion time; None for runaway ranks (they never end)."""
        if self.script.failure_mode is FailureMode.RUNAWAY:
            return None
        return self.started_at + float(self.script.declared_runtime_s)

    def running(self, now: float) -> bool:
        if self.killed_at is not None:
            return False
        end = self.ends_at
        return end is None or now < end

    def completed(self, now: float) -> bool:
        end = self.ends_at
        return self.killed_at is None and end is not None and now >= end


class JobRunState(str, Enum):
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"


@dataclass
class JobRun:
    """Fleet-side run state for one spawned job across a block."""

    job_id: str
    block_id: str
    master_node: str
    environment: str
    script: SimJobScript
    ranks: list[RankRun]
    started_at: float
    state: JobRunState = JobRunState.RUNNING
    finished_at: Optional[float] = None
    diagnostic: str = ""
    result: Optional[bytes] = None


class SimNode:
    """One simulated machine: record + staged files + environment + ranks."""

    def __init__(self, record: NodeRecord, base_env: dict[str, str]):
        self.record = record
        self.files: dict[str, bytes] = {}
        self.base_env = dict(base_env)
        self.env: dict[str, str] = dict(base_env)
        self.applied_module: Optional[str] = None
        self.ranks: list[RankRun] = []
        self.temp_offset: float = 0.0
        self.sensor_fault: bool = False
        self.lock = threading.RLock()

    def running_ranks(self, now: float) -> list[RankRun]:
        if self.record.power is PowerState.OFF:
            return []
        return [r for r in self.ranks if r.running(now)]


DEFAULT_BASE_ENV = {
    "PATH": "/usr/bin:/bin",
    "LD_LIBRARY_PATH": "/usr/lib",
    "HOME": "/home/block",
}


class Cluster:
    """The whole simulated fleet behind one channel endpoint.

    Commands to one node serialize on that node's lock; different nodes
    proceed concurrently. Channel checks run in a fixed order: node exists,
    sender identity, node power.
    """

    def __init__(
        self,
        nodes: Iterable[NodeRecord],
        clock: Clock,
        manifest: Optional[dict[str, ModuleManifestEntry]] = None,
        gateway_identity: str = "gateway",
        envelope_sink: Optional[Callable[[CommandEnvelope], None]] = None,
        base_env: Optional[dict[str, str]] = None,
    ):
        self.clock = clock
        self.manifest = dict(manifest) if manifest is not None else dict(DEFAULT_MANIFEST)
        self.gateway_identity = gateway_identity
        self.envelope_sink = envelope_sink
        self.envelopes: list[CommandEnvelope] = []
        self._envelope_lock = threading.Lock()
        env = dict(base_env) if base_env is not None else dict(DEFAULT_BASE_ENV)
        self._nodes: dict[str, SimNode] = {}
        for record in nodes:
            if record.node_id in self._nodes:
                raise ValueError(f"duplicate node_id {record.node_id}")
            self._nodes[record.node_id] = SimNode(record, env)
        self._jobs: dict[str, JobRun] = {}
        self._live_jobs: set[str] = set()
        self._jobs_lock = threading.RLock()

    # -- plumbing -------------------------------------------------------------

    def node(self, node_id: str) -> SimNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node {node_id} in the fleet") from None

    def node_ids(self) -> list[str]:
        return sorted(self._nodes)

    def records(self) -> list[NodeRecord]:
        return [n.record for n in self._nodes.values()]

    def _audit(self, envelope: CommandEnvelope) -> None:
        with self._envelope_lock:
            self.envelopes.append(envelope)
        if self.envelope_sink is not None:
            self.envelope_sink(envelope)

    def _check_channel(self, sender_identity: str, node: SimNode, command: str, context: str) -> None:
        """Shared channel gate; records the refused attempt before raising."""
        if sender_identity != self.gateway_identity:
            self._audit(
                CommandEnvelope(
                    target=node.record.node_id,
                    command=command,
                    sender_identity=sender_identity,
                    sent_at=self.clock.now(),
                    context=context,
                    error="identity rejected",
                )
            )
            raise IdentityRejected(f"sender key {sender_identity!r} is not authorized")
        if node.record.power is PowerState.OFF:
            self._audit(
                CommandEnvelope(
                    target=node.record.node_id,
                    command=command,
                    sender_identity=sender_identity,
                    sent_at=self.clock.now(),
                    context=context,
                    error="node unreachable",
                )
            )
            raise NodeUnreachable(f"node {node.record.node_id} is powered off")

    # -- power ------------------------------------------------------------------

    def set_power(self, node_id: str, target: PowerState, context: str = "") -> NodeRecord:
        """Idempotent per-node power switch; other nodes are never touched."""
        node = self.node(node_id)
        now = self.clock.now()
        with node.lock:
            killed: list[str] = []
            if target is PowerState.OFF and node.record.power is PowerState.ON:
                for rank in node.ranks:
                    if rank.running(now):
                        rank.killed_at = now
                        rank.kill_reason = "power off"
                        killed.append(f"killed rank {rank.rank} of {rank.job_id}")
                node.record.load = 0.0
            node.record.power = target
            if target is PowerState.OFF:
                node.record.load = 0.0
            stdout = "\n".join(killed) + ("\n" if killed else "")
            self._audit(
                CommandEnvelope(
                    target=node_id,
                    command=f"power {target.value}",
                    sender_identity=self.gateway_identity,
                    sent_at=now,
                    context=context,
                    result=CommandResult(0, stdout, ""),
                )
            )
            return node.record

    # -- command execution ---------------------------------------------------------

    def exec_command(
        self, sender_identity: str, node_id: str, command: str, context: str = ""
    ) -> CommandEnvelope:
        node = self.node(node_id)
        self._check_channel(sender_identity, node, command, context)
        with node.lock:
            exit_code, stdout, stderr = run_command(
                command, env=node.env, files=node.files, clock=self.clock
            )
            envelope = CommandEnvelope(
                target=node_id,
                command=command,
                sender_identity=sender_identity,
                sent_at=self.clock.now(),
                context=context,
                result=CommandResult(exit_code, stdout, stderr),
            )
        self._audit(envelope)
        return envelope

    # -- file staging ------------------------------------------------------------

    def transfer_file(
        self,
        sender_identity: str,
        node_id: str,
        direction: TransferDirection,
        name: str,
        data: Optional[bytes] = None,
        context: str = "",
    ) -> Optional[bytes]:
        node = self.node(node_id)
        label = f"transfer {direction.value} {name}"
        self._check_channel(sender_identity, node, label, context)
        with node.lock:
            if direction is TransferDirection.IN:
                if data is None:
                    raise ValueError("inbound transfer requires bytes")
                node.files[name] = bytes(data)
                payload, out = None, f"staged {name} ({len(data)} bytes)\n"
            else:
                if name not in node.files:
                    self._audit(
                        CommandEnvelope(
                            target=node_id,
                            command=label,
                            sender_identity=sender_identity,
                            sent_at=self.clock.now(),
                            context=context,
                            error="no such file",
                        )
                    )
                    raise NoSuchFile(f"node {node_id} has no staged file {name!r}")
                payload, out = node.files[name], f"fetched {name}\n"
            self._audit(
                CommandEnvelope(
                    target=node_id,
                    command=label,
                    sender_identity=sender_identity,
                    sent_at=self.clock.now(),
                    context=context,
                    result=CommandResult(0, out, ""),
                )
            )
            return payload

    # -- environment modules -----------------------------------------------------

    def switch_module(self, block: Block, module_name: str, context: str = "") -> dict[str, str]:
        """Apply one manifest entry across the whole block, all-or-nothing."""
        entry = manifest_entry(self.manifest, module_name)
        nodes = [self.node(nid) for nid in block.node_ids]
        for node in nodes:
            if node.record.power is PowerState.OFF:
                raise NodeUnreachable(
                    f"node {node.record.node_id} is powered off; no node was modified"
                )
        for node in nodes:
            with node.lock:
                env = node.env
                if node.applied_module is not None:
                    env = remove_module(env, self.manifest[node.applied_module])
                node.env = apply_module(env, entry)
                node.applied_module = module_name
                self._audit(
                    CommandEnvelope(
                        target=node.record.node_id,
                        command=f"module switch {module_name}",
                        sender_identity=self.gateway_identity,
                        sent_at=self.clock.now(),
                        context=context,
                        result=CommandResult(0, f"module {module_name} applied\n", ""),
                    )
                )
        return dict(self.node(block.master_node).env)

    # -- jobs -------------------------------------------------------------------

    def spawn_job(
        self,
        block: Block,
        job_id: str,
        archive_name: str,
        environment: str,
        context: str = "",
    ) -> JobRun:
        """Unpack the staged archive, fan the payload out, start one rank per node."""
        nodes = [self.node(nid) for nid in block.node_ids]
        for node in nodes:
            if node.record.power is PowerState.OFF:
                raise NodeUnreachable(f"node {node.record.node_id} is powered off")
            if node.applied_module != environment:
                raise EnvironmentMismatch(
                    f"node {node.record.node_id} has environment "
                    f"{node.applied_module!r}, job wants {environment!r}"
                )
        master = self.node(block.master_node)
        if archive_name not in master.files:
            raise NoSuchFile(f"archive {archive_name!r} is not staged on the master")
        script, files = parse_job_archive(master.files[archive_name])

        with master.lock:
            master.files.update(files)
        for node in nodes:
            if node is master:
                continue
            for name, data in files.items():
                self.transfer_file(
                    self.gateway_identity,
                    node.record.node_id,
                    TransferDirection.IN,
                    name,
                    data,
                    context=context,
                )

        now = self.clock.now()
        ranks: list[RankRun] = []
        ordered = [block.master_node] + [n for n in block.node_ids if n != block.master_node]
        for rank_index, node_id in enumerate(ordered):
            rank = RankRun(
                job_id=job_id,
                rank=rank_index,
                node_id=node_id,
                script=script,
                started_at=now,
            )
            ranks.append(rank)
            self.node(node_id).ranks.append(rank)
            self._audit(
                CommandEnvelope(
                    target=node_id,
                    command=f"launch {job_id} rank {rank_index}",
                    sender_identity=self.gateway_identity,
                    sent_at=now,
                    context=context,
                    result=CommandResult(0, f"rank {rank_index} started\n", ""),
                )
            )
        run = JobRun(
            job_id=job_id,
            block_id=block.block_id,
            master_node=block.master_node,
            environment=environment,
            script=script,
            ranks=ranks,
            started_at=now,
        )
        with self._jobs_lock:
            self._jobs[job_id] = run
            self._live_jobs.add(job_id)
        return run

    def job_run(self, job_id: str) -> Optional[JobRun]:
        with self._jobs_lock:
            return self._jobs.get(job_id)

    def poll_jobs(self, now: Optional[float] = None) -> list[JobRun]:
        """Resolve every job whose ranks have all ended; returns the newly settled runs."""
        now = self.clock.now() if now is None else now
        settled: list[JobRun] = []
        with self._jobs_lock:
            for job_id in sorted(self._live_jobs):
                run = self._jobs[job_id]
                if any(r.killed_at is not None for r in run.ranks):
                    self._settle(run, now, killed=True)
                    settled.append(run)
                elif all(r.completed(now) for r in run.ranks):
                    self._settle(run, now, killed=False)
                    settled.append(run)
            for run in settled:
                self._live_jobs.discard(run.job_id)
        return settled

    def _settle(self, run: JobRun, now: float, killed: bool) -> None:
        outputs: list[tuple[int, str, int, str]] = []
        bad: list[str] = []
        finished_at = run.started_at
        for rank in run.ranks:
            if rank.killed_at is not None:
                exit_code = KILLED_EXIT
                output = f"killed: {rank.kill_reason}"
                bad.append(f"rank {rank.rank} on {rank.node_id} killed ({rank.kill_reason})")
                finished_at = max(finished_at, rank.killed_at)
            elif rank.completed(now):
                exit_code = rank.script.exit_code_for_rank(rank.rank)
                output = rank.script.declared_output
                if exit_code != 0:
                    bad.append(f"rank {rank.rank} on {rank.node_id} exited {exit_code}")
                finished_at = max(finished_at, rank.ends_at or now)
            else:
                # sibling rank still nominally running while another was killed
                rank.killed_at = now
                rank.kill_reason = "job aborted"
                exit_code = KILLED_EXIT
                output = "killed: job aborted"
                bad.append(f"rank {rank.rank} on {rank.node_id} aborted")
                finished_at = max(finished_at, now)
            outputs.append((rank.rank, rank.node_id, exit_code, output))
        run.result = build_result_archive(outputs)
        run.finished_at = finished_at
        run.diagnostic = "; ".join(bad)
        run.state = JobRunState.FAILED if (bad or killed) else JobRunState.FINISHED
        for rank in run.ranks:
            node = self._nodes.get(rank.node_id)
            if node is not None and rank in node.ranks:
                node.ranks.remove(rank)  # settled; keep sensor reads O(live ranks)
        master = self._nodes.get(run.master_node)
        if master is not None and master.record.power is PowerState.ON:
            with master.lock:
                master.files[f"{run.job_id}.result.tar"] = run.result

    # -- telemetry ----------------------------------------------------------------

    def inject_temperature_offset(self, node_id: str, offset_c: float) -> None:
        self.node(node_id).temp_offset = float(offset_c)

    def inject_sensor_fault(self, node_id: str, broken: bool = True) -> None:
        self.node(node_id).sensor_fault = broken

    def read_sensors(self, node_id: str, now: Optional[float] = None) -> TelemetrySample:
        """Sensor model: ambient 25 C + 8 C per unit load + injected offset."""
        node = self.node(node_id)
        if node.sensor_fault:
            raise SensorFault(f"sensor on {node_id} is not answering")
        now = self.clock.now() if now is None else now
        load = 1.0 if node.running_ranks(now) else 0.0
        temperature = AMBIENT_C + DEGREES_PER_LOAD * load + node.temp_offset
        node.record.load = load
        node.record.temperature_c = temperature
        return TelemetrySample(node_id=node_id, temperature_c=temperature, load=load, taken_at=now)
