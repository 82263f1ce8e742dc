"""Automated control-and-monitoring loop.

Each tick: settle finished jobs, sample every powered-on node, shut down
nodes above the temperature threshold, and expire blocks whose usage period
is over. Every action is persisted (store audit stream + NDJSON action log)
before it is executed, and per-node sensor failures only mark the node
stale; they never abort the tick.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from .allocator import Inventory
from .clock import Clock
from .domain import (
    Application,
    AppEvent,
    AppState,
    JobState,
    PeriodState,
    Policy,
    PowerState,
    period_status,
    transition_application,
)
from .errors import ClusterError
from .fleet import Cluster, JobRunState, KILLED_EXIT, SensorFault
from .store import Kind, Store

log = logging.getLogger(__name__)

AUDIT_STREAM = "audit"
TELEMETRY_STREAM = "telemetry"
STALE_AFTER_MISSES = 2


class UnknownApplication(ClusterError):
    code = "unknown_application"


class ActionKind(str, Enum):
    THRESHOLD_SHUTDOWN = "threshold_shutdown"
    BLOCK_EXPIRED = "block_expired"


@dataclass(frozen=True)
class SentinelAction:
    kind: ActionKind
    target: str  # node_id or block_id
    at: float
    cause: str


def record_transition(store: Store, app: Application, previous: AppState, at: float) -> None:
    """Append one application state change to the audit stream."""
    store.append_event(
        AUDIT_STREAM,
        {
            "event": "app_transition",
            "app_id": app.app_id,
            "from": previous.value,
            "to": app.state.value,
            "at": at,
        },
    )


def settle_job_runs(store: Store, cluster: Cluster, now: float) -> list[str]:
    """Harvest fleet runs that have ended and persist their outcome.

    Jobs already settled in the store (e.g. failed by the expiry reaper) only
    gain their artifact. Returns the ids whose state changed.
    """
    changed: list[str] = []
    for run in cluster.poll_jobs(now):
        if run.result is not None and not store.has_artifact(run.job_id):
            store.put_artifact(run.job_id, run.result)

        def update(txn, run=run):
            body = txn.read(Kind.JOB, run.job_id)
            if body is None or body["state"] != JobState.RUNNING.value:
                return False
            body["state"] = (
                JobState.FINISHED.value
                if run.state is JobRunState.FINISHED
                else JobState.FAILED.value
            )
            body["finished_at"] = run.finished_at
            body["exit_status"] = 0 if run.state is JobRunState.FINISHED else 1
            body["diagnostic"] = run.diagnostic
            txn.write(Kind.JOB, run.job_id, body)
            return True

        if store.run(update):
            changed.append(run.job_id)
            store.append_event(
                AUDIT_STREAM,
                {
                    "event": "job_settled",
                    "job_id": run.job_id,
                    "state": run.state.value,
                    "at": now,
                },
            )
    return changed


class Sentinel:
    """One per deployment. tick() is the whole control loop body."""

    def __init__(
        self,
        store: Store,
        cluster: Cluster,
        inventory: Inventory,
        policy: Policy,
        clock: Clock,
        action_log_path: Optional[str | Path] = None,
    ):
        self.store = store
        self.cluster = cluster
        self.inventory = inventory
        self.policy = policy
        self.clock = clock
        self.action_log_path = Path(action_log_path) if action_log_path else None
        self.miss_counts: dict[str, int] = {}
        self.last_samples: dict[str, dict] = {}
        self._tick_lock = threading.Lock()
        self._loop_thread: Optional[threading.Thread] = None
        self._stop = threading.Event()

    # -- the loop body -----------------------------------------------------------

    def tick(self, now: Optional[float] = None) -> list[SentinelAction]:
        now = self.clock.now() if now is None else now
        actions: list[SentinelAction] = []
        settle_job_runs(self.store, self.cluster, now)
        hot_nodes = self._sample_sensors(now)
        for node_id, temperature in hot_nodes:
            actions.append(self._shutdown_hot_node(node_id, temperature, now))
        actions.extend(self._expire_finished_periods(now))
        return actions

    def _sample_sensors(self, now: float) -> list[tuple[str, float]]:
        """Sample every On node; returns those above threshold. Faults never abort."""
        hot: list[tuple[str, float]] = []
        for record in self.cluster.records():
            if record.power is not PowerState.ON:
                continue
            try:
                sample = self.cluster.read_sensors(record.node_id, now)
            except SensorFault:
                self.miss_counts[record.node_id] = self.miss_counts.get(record.node_id, 0) + 1
                continue
            self.miss_counts[record.node_id] = 0
            payload = {
                "node_id": sample.node_id,
                "temperature_c": sample.temperature_c,
                "load": sample.load,
                "taken_at": sample.taken_at,
            }
            self.last_samples[record.node_id] = payload
            self.store.append_event(TELEMETRY_STREAM, payload)
            if sample.temperature_c > self.policy.temp_threshold_c:
                hot.append((record.node_id, sample.temperature_c))
        return hot

    def stale_nodes(self) -> set[str]:
        return {n for n, misses in self.miss_counts.items() if misses >= STALE_AFTER_MISSES}

    def _shutdown_hot_node(self, node_id: str, temperature: float, now: float) -> SentinelAction:
        action = SentinelAction(
            kind=ActionKind.THRESHOLD_SHUTDOWN,
            target=node_id,
            at=now,
            cause=(
                f"temperature {temperature:.1f}C exceeds threshold "
                f"{self.policy.temp_threshold_c:.1f}C"
            ),
        )
        self._persist_action(action)
        self.cluster.set_power(node_id, PowerState.OFF, context="sentinel")
        return action

    def _expire_finished_periods(self, now: float) -> list[SentinelAction]:
        actions: list[SentinelAction] = []
        for app_id in self.store.list_ids(Kind.APPLICATION):
            body = self.store.get(Kind.APPLICATION, app_id)
            if body is None or body["state"] != AppState.ACTIVE.value:
                continue
            app = Application.from_body(body)
            assert app.period is not None
            if period_status(app.period, now).state is not PeriodState.OVER:
                continue
            actions.append(self._expire_application(app, now))
        return actions

    def _expire_application(self, app: Application, now: float) -> SentinelAction:
        block_id = self._block_id_for(app.app_id)
        action = SentinelAction(
            kind=ActionKind.BLOCK_EXPIRED,
            target=block_id or app.app_id,
            at=now,
            cause=f"usage period of application {app.app_id} is over",
        )
        self._persist_action(action)

        for node_id in app.assignment:
            self.cluster.set_power(node_id, PowerState.OFF, context="sentinel")
        self.cluster.poll_jobs(now)  # settle runs killed by the power-off
        self._fail_running_jobs(app.app_id, now)
        if block_id is not None:
            self.inventory.release(block_id)

        def transition(txn):
            body = txn.read(Kind.APPLICATION, app.app_id)
            assert body is not None
            current = Application.from_body(body)
            updated = transition_application(current, AppEvent.EXPIRE)
            txn.write(Kind.APPLICATION, app.app_id, updated.to_body())
            return (current.state, updated)

        previous, updated = self.store.run(transition)
        record_transition(self.store, updated, previous, now)
        return action

    def _fail_running_jobs(self, app_id: str, now: float) -> None:
        for job_id in self.store.list_ids(Kind.JOB):
            body = self.store.get(Kind.JOB, job_id)
            if body is None or body["app_id"] != app_id:
                continue
            if body["state"] != JobState.RUNNING.value:
                continue

            def fail(txn, job_id=job_id):
                current = txn.read(Kind.JOB, job_id)
                assert current is not None
                current["state"] = JobState.FAILED.value
                current["finished_at"] = now
                current["exit_status"] = KILLED_EXIT
                current["diagnostic"] = "period expired"
                txn.write(Kind.JOB, job_id, current)

            self.store.run(fail)
            run = self.cluster.job_run(job_id)
            if run is not None and run.result is not None and not self.store.has_artifact(job_id):
                self.store.put_artifact(job_id, run.result)
            self.store.append_event(
                AUDIT_STREAM,
                {"event": "job_settled", "job_id": job_id, "state": "failed", "at": now,
                 "cause": "period expired"},
            )

    def _block_id_for(self, app_id: str) -> Optional[str]:
        for block_id in self.store.list_ids(Kind.BLOCK):
            body = self.store.get(Kind.BLOCK, block_id)
            if body is not None and body["app_id"] == app_id:
                return block_id
        for block in self.inventory.active_blocks():
            if block.app_id == app_id:
                return block.block_id
        return None

    def _persist_action(self, action: SentinelAction) -> None:
        """Write-ahead: both audit appends land before the action executes."""
        target_key = "node" if action.kind is ActionKind.THRESHOLD_SHUTDOWN else "block"
        entry = {"kind": action.kind.value, target_key: action.target,
                 "at": action.at, "cause": action.cause}
        self.store.append_event(
            AUDIT_STREAM, {"event": "sentinel_action", **entry}
        )
        if self.action_log_path is not None:
            self.action_log_path.parent.mkdir(parents=True, exist_ok=True)
            with self.action_log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    # -- reporting ------------------------------------------------------------------

    def usage_report(self, app_id: str) -> dict:
        """Sample series per block node plus the application's action history."""
        body = self.store.get(Kind.APPLICATION, app_id)
        if body is None:
            raise UnknownApplication(f"no application {app_id}")
        app = Application.from_body(body)
        node_ids = set(app.assignment)
        samples: dict[str, list[dict]] = {node_id: [] for node_id in sorted(node_ids)}
        for event in self.store.read_events(TELEMETRY_STREAM):
            payload = event["payload"]
            if payload.get("node_id") in node_ids:
                samples[payload["node_id"]].append(payload)
        history = []
        for event in self.store.read_events(AUDIT_STREAM):
            payload = event["payload"]
            if payload.get("app_id") == app_id:
                history.append(payload)
            elif payload.get("event") == "sentinel_action" and (
                payload.get("node") in node_ids or payload.get("block") == self._block_id_for(app_id)
            ):
                history.append(payload)
        return {"app_id": app_id, "state": app.state.value, "samples": samples, "history": history}

    # -- background loop ---------------------------------------------------------------

    def start(self) -> None:
        """Run tick() every policy.sentinel_tick_seconds; overlapping ticks are skipped."""
        self._stop.clear()
        self._loop_thread = threading.Thread(target=self._loop, daemon=True)
        self._loop_thread.start()

    def _loop(self) -> None:
        while not self._stop.wait(self.policy.sentinel_tick_seconds):
            if not self._tick_lock.acquire(blocking=False):
                log.warning("sentinel tick skipped: previous tick still executing")
                continue
            try:
                self.tick()
            except Exception:
                log.exception("sentinel tick failed")
            finally:
                self._tick_lock.release()

    def stop(self) -> None:
        self._stop.set()
        if self._loop_thread is not None:
            self._loop_thread.join(timeout=10)
            self._loop_thread = None
