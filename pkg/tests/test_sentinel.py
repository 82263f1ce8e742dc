"""Sentinel: telemetry sweep, threshold shutdown, expiry reaper, reports."""

from __future__ import annotations

import json

import pytest

from clusterblocks.allocator import Assignment, Inventory
from clusterblocks.clock import FakeClock
from clusterblocks.domain import (
    Applicant,
    Application,
    AppState,
    JobState,
    Policy,
    PowerState,
)
from clusterblocks.fleet import Cluster, TransferDirection
from clusterblocks.fleet.jobs import FailureMode, SimJobScript, build_job_archive
from clusterblocks.sentinel import (
    ActionKind,
    Sentinel,
    UnknownApplication,
)
from clusterblocks.store import Kind, Store

from conftest import make_nodes

HOUR = 3600.0
POLICY = Policy()  # threshold 60C, tick 5s


class World:
    """Hand-wired store + fleet + sentinel, bypassing the gateway."""

    def __init__(self, tmp_path, node_groups=(("small", 3), ("large", 3))):
        self.clock = FakeClock(start=0.0)
        self.store = Store(tmp_path / "store", durable=False)
        self.nodes = make_nodes(*node_groups)
        self.inventory = Inventory(self.nodes)

        def audit_envelope(envelope):
            self.store.append_event(
                "audit",
                {
                    "event": "envelope",
                    "target": envelope.target,
                    "command": envelope.command,
                    "context": envelope.context,
                    "at": envelope.sent_at,
                },
            )

        self.cluster = Cluster(self.nodes, clock=self.clock, envelope_sink=audit_envelope)
        self.sentinel = Sentinel(
            store=self.store,
            cluster=self.cluster,
            inventory=self.inventory,
            policy=POLICY,
            clock=self.clock,
            action_log_path=tmp_path / "actions.ndjson",
        )
        self.action_log = tmp_path / "actions.ndjson"

    def active_app(self, node_ids, hours=48.0, app_tag="app-1"):
        """An Active application holding a reserved, powered-on block."""
        now = self.clock.now()
        period = (now, now + hours * HOUR)
        block = self.inventory.reserve(Assignment(tuple(node_ids), 0.0), app_tag, period)
        app = Application(
            app_id=app_tag,
            applicant=Applicant("A", "a@x", "test block"),
            nodes_requested=len(node_ids),
            state=AppState.ACTIVE,
            assignment=tuple(block.node_ids),
            period=period,
            access_token="t" * 64,
        )
        self.store.run(lambda txn: txn.write(Kind.APPLICATION, app.app_id, app.to_body()))
        self.store.run(lambda txn: txn.write(Kind.BLOCK, block.block_id, block.to_body()))
        for node_id in block.node_ids:
            self.cluster.set_power(node_id, PowerState.ON)
        return app, block

    def running_job(self, app, block, script, job_tag="job-1"):
        archive = build_job_archive(script)
        self.cluster.transfer_file(
            "gateway", block.master_node, TransferDirection.IN, f"{job_tag}.tar", archive
        )
        self.cluster.switch_module(block, "mpich2")
        run = self.cluster.spawn_job(block, job_tag, f"{job_tag}.tar", "mpich2")
        body = {
            "job_id": job_tag, "block_id": block.block_id, "app_id": app.app_id,
            "environment": "mpich2", "archive_name": f"{job_tag}.tar",
            "state": JobState.RUNNING.value, "started_at": run.started_at,
            "finished_at": None, "exit_status": None, "diagnostic": "",
        }
        self.store.run(lambda txn: txn.write(Kind.JOB, job_tag, body))
        return run


@pytest.fixture
def world(tmp_path):
    return World(tmp_path)


def node_state(cluster, node_id):
    record = cluster.node(node_id).record
    return (record.power, record.owner, record.load, record.temperature_c)


class TestQuiescence:
    def test_cool_nodes_running_periods_no_actions(self, world):
        world.active_app(["n00", "n01", "n02"])
        assert world.sentinel.tick() == []

    def test_telemetry_appended_per_on_node(self, world):
        world.active_app(["n00", "n01"])
        world.sentinel.tick()
        world.clock.advance(5)
        world.sentinel.tick()
        samples = world.store.read_events("telemetry")
        assert len(samples) == 4  # 2 nodes x 2 ticks
        per_node = [e["payload"]["node_id"] for e in samples]
        assert per_node.count("n00") == 2 and per_node.count("n01") == 2


class TestThreshold:
    def test_hot_node_shut_down_siblings_untouched(self, world):
        world.active_app(["n00", "n01", "n02"], app_tag="app-1")
        world.active_app(["n03", "n04"], app_tag="app-2")
        world.sentinel.tick()  # settle baseline samples
        world.clock.advance(5)
        world.cluster.inject_temperature_offset("n01", 50.0)  # 25 + 50 = 75 > 60
        before = {nid: node_state(world.cluster, nid) for nid in ("n00", "n02", "n03", "n04")}

        actions = world.sentinel.tick()

        shutdowns = [a for a in actions if a.kind is ActionKind.THRESHOLD_SHUTDOWN]
        assert len(shutdowns) == 1 and shutdowns[0].target == "n01"
        assert world.cluster.node("n01").record.power is PowerState.OFF
        after = {nid: node_state(world.cluster, nid) for nid in ("n00", "n02", "n03", "n04")}
        assert before == after  # sibling nodes and the sibling block bit-identical

    def test_block_keeps_remaining_nodes_after_shutdown(self, world):
        app, block = world.active_app(["n00", "n01", "n02"])
        world.cluster.inject_temperature_offset("n01", 50.0)
        world.sentinel.tick()
        assert world.cluster.node("n01").record.owner == block.block_id  # still owned
        assert world.store.get(Kind.APPLICATION, app.app_id)["state"] == "active"

    def test_safety_no_on_node_stays_above_threshold(self, world):
        world.active_app(["n00", "n01", "n02"])
        for node_id in ("n00", "n02"):
            world.cluster.inject_temperature_offset(node_id, 60.0)
        world.sentinel.tick()
        for record in world.cluster.records():
            if record.power is PowerState.ON:
                assert record.temperature_c <= POLICY.temp_threshold_c

    def test_idempotent_at_same_timestamp(self, world):
        world.active_app(["n00", "n01"])
        world.cluster.inject_temperature_offset("n00", 50.0)
        first = world.sentinel.tick(world.clock.now())
        second = world.sentinel.tick(world.clock.now())
        assert len(first) == 1
        assert second == []


class TestExpiry:
    def test_runaway_reaped_at_period_end(self, world):
        app, block = world.active_app(["n00", "n01", "n02"], hours=48)
        world.running_job(app, block, SimJobScript(1, "x", FailureMode.RUNAWAY))
        world.clock.advance(48 * HOUR)  # end-exclusive: exactly at the boundary
        actions = world.sentinel.tick()

        kinds = [a.kind for a in actions]
        assert kinds == [ActionKind.BLOCK_EXPIRED]
        job = world.store.get(Kind.JOB, "job-1")
        assert job["state"] == "failed"
        assert job["diagnostic"] == "period expired"
        assert world.store.get_artifact("job-1")  # failed jobs still carry a result
        for node_id in block.node_ids:
            assert world.cluster.node(node_id).record.power is PowerState.OFF
        assert world.store.get(Kind.APPLICATION, app.app_id)["state"] == "expired"
        assert world.inventory.node("n00").owner is None  # block released

    def test_finished_job_not_failed_by_expiry(self, world):
        app, block = world.active_app(["n00", "n01"], hours=1)
        world.running_job(app, block, SimJobScript(2, "done"))
        world.clock.advance(1 * HOUR)
        world.sentinel.tick()
        job = world.store.get(Kind.JOB, "job-1")
        assert job["state"] == "finished"  # completed virtually before the period ended

    def test_expiry_within_one_tick_of_period_end(self, world):
        app, _ = world.active_app(["n00", "n01"], hours=1)
        world.clock.advance(1 * HOUR - 1)
        world.sentinel.tick()
        assert world.store.get(Kind.APPLICATION, app.app_id)["state"] == "active"
        world.clock.advance(1 + POLICY.sentinel_tick_seconds)
        world.sentinel.tick()
        assert world.store.get(Kind.APPLICATION, app.app_id)["state"] == "expired"

    def test_expiry_does_not_touch_other_blocks(self, world):
        world.active_app(["n00", "n01"], hours=1, app_tag="app-short")
        world.active_app(["n03", "n04"], hours=60, app_tag="app-long")
        world.clock.advance(2 * HOUR)
        before = {nid: node_state(world.cluster, nid) for nid in ("n03", "n04")}
        world.sentinel.tick()
        after = {nid: node_state(world.cluster, nid) for nid in ("n03", "n04")}
        assert before == after
        assert world.store.get(Kind.APPLICATION, "app-long")["state"] == "active"

    def test_idempotent_after_expiry(self, world):
        world.active_app(["n00", "n01"], hours=1)
        world.clock.advance(2 * HOUR)
        assert len(world.sentinel.tick()) == 1
        assert world.sentinel.tick() == []


class TestWriteAheadAudit:
    def test_action_logged_before_execution(self, world):
        world.active_app(["n00", "n01"])
        world.cluster.inject_temperature_offset("n00", 50.0)
        world.sentinel.tick()
        events = world.store.read_events("audit")
        action_seq = next(
            e["seq"] for e in events if e["payload"].get("event") == "sentinel_action"
        )
        power_seq = next(
            e["seq"]
            for e in events
            if e["payload"].get("event") == "envelope"
            and e["payload"]["target"] == "n00"
            and "power off" in e["payload"]["command"]
        )
        assert action_seq < power_seq

    def test_action_log_file_lines(self, world):
        world.active_app(["n00", "n01"], hours=1)
        world.cluster.inject_temperature_offset("n00", 50.0)
        world.sentinel.tick()
        world.clock.advance(2 * HOUR)
        world.sentinel.tick()
        lines = [json.loads(l) for l in world.action_log.read_text().splitlines()]
        assert lines[0]["kind"] == "threshold_shutdown" and lines[0]["node"] == "n00"
        assert lines[-1]["kind"] == "block_expired" and "block" in lines[-1]
        assert all({"kind", "at", "cause"} <= set(l) for l in lines)


class TestStaleness:
    def test_two_missed_ticks_mark_stale(self, world):
        world.active_app(["n00", "n01"])
        world.cluster.inject_sensor_fault("n00")
        world.sentinel.tick()
        assert world.sentinel.stale_nodes() == set()
        world.clock.advance(5)
        world.sentinel.tick()
        assert world.sentinel.stale_nodes() == {"n00"}

    def test_recovery_clears_staleness(self, world):
        world.active_app(["n00", "n01"])
        world.cluster.inject_sensor_fault("n00")
        world.sentinel.tick()
        world.sentinel.tick()
        world.cluster.inject_sensor_fault("n00", broken=False)
        world.sentinel.tick()
        assert world.sentinel.stale_nodes() == set()


class TestUsageReport:
    def test_sample_series_per_block_node(self, world):
        app, _ = world.active_app(["n00", "n01"])
        world.sentinel.tick()
        world.clock.advance(5)
        world.sentinel.tick()
        report = world.sentinel.usage_report(app.app_id)
        assert set(report["samples"]) == {"n00", "n01"}
        assert all(len(series) == 2 for series in report["samples"].values())

    def test_expired_app_history_ends_with_block_expired(self, world):
        app, _ = world.active_app(["n00", "n01"], hours=1)
        world.sentinel.tick()
        world.clock.advance(2 * HOUR)
        world.sentinel.tick()
        report = world.sentinel.usage_report(app.app_id)
        sentinel_actions = [h for h in report["history"] if h.get("event") == "sentinel_action"]
        assert sentinel_actions[-1]["kind"] == "block_expired"

    def test_unknown_application(self, world):
        with pytest.raises(UnknownApplication):
            world.sentinel.usage_report("app-missing")
